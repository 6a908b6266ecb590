/** Wire types for the triageflow HTTP API.
 *
 * These mirror the JSON the service emits field for field. The client never
 * invents values for any of them; everything here comes off the wire.
 */

export type PhaseName =
  | "collecting_demographics"
  | "collecting_concern"
  | "navigating"
  | "completed"
  | "no_flowchart_escalation"
  | "stalled_escalation";

export type SexValue = "male" | "female";
export type AgeUnit = "years" | "months";
export type AnswerValue = "yes" | "no";

export interface DemographicsView {
  sex: SexValue;
  age_value: number;
  age_unit: AgeUnit;
}

export interface AlternativeView {
  flowchart_id: string;
  name: string;
}

export interface SessionView {
  session_id: string;
  created_at: string;
  phase: PhaseName;
  closed: boolean;
  turn_count: number;
  demographics: DemographicsView | null;
  opening_statement: string | null;
  flowchart_id: string | null;
  flowchart_name: string | null;
  current_node_id: string | null;
  question: string | null;
  alternatives: AlternativeView[];
  recommendation: string | null;
  last_reply: string | null;
}

/** POST /sessions, POST .../messages and POST .../chart all answer with the
 * nurse's reply plus a fresh session view. */
export interface SessionEnvelope {
  reply: string | null;
  session: SessionView;
}

export interface ChartSummary {
  flowchart_id: string;
  name: string;
  specialty: string;
  applicability: string;
  description: string;
}

export interface TrailVerdict {
  is_on_topic: boolean;
  is_answered: boolean;
  actual_answer: AnswerValue | null;
  is_uncertain: boolean;
}

export type ActionKind = "advance" | "confirm_uncertain" | "clarify" | "restate_off_topic";

export interface TrailAction {
  kind: ActionKind;
  answer?: AnswerValue;
}

/** One line of the ndjson trail: a fully interpreted navigation turn. */
export interface TrailEntry {
  turn_index: number;
  flowchart_id: string;
  node_id: string;
  question_text: string;
  utterance: string;
  verdict: TrailVerdict;
  action: TrailAction;
  timestamp: string;
}

export interface DemographicsInput {
  sex: SexValue;
  age_value: number;
  age_unit: AgeUnit;
}
