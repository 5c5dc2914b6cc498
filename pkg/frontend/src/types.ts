// Payload shapes of the review service HTTP API (schema_version 1).
// These mirror docs/formats.md in the backend repository; the UI never
// invents fields of its own on top of them.

export type Decision = 'APPROVED' | 'REJECTED';

export interface ExampleValue {
  doc_id: string;
  value: string;
}

export interface ItemView {
  item_id: string;
  label: string;
  aliases: string[];
  examples: ExampleValue[];
}

export interface ProposalView {
  proposal_id: string;
  status: string;
  justification: string;
  source: ItemView;
  target: ItemView;
  template_version: number;
}

export interface PendingResponse {
  schema_version: number;
  session_id: string;
  group_id: number;
  template_version: number;
  proposals: ProposalView[];
}

export interface DecisionResponse {
  schema_version: number;
  template_version: number;
  pending_count: number;
}

export interface TemplateItem {
  id: string;
  section: string;
  label: string;
  aliases: string[];
}

export interface TemplateResponse {
  schema_version: number;
  session_id: string;
  template_version: number;
  template: {
    group_id: number;
    items: TemplateItem[];
    provenance: Record<string, string[]>;
  };
}
