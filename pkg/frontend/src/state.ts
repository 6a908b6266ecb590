/** Client-side session state.
 *
 * The state is a mirror of the latest session view plus the few bits the
 * browser owns: the compose box, the pending flag that enforces one
 * in-flight message, the transcript as typed, and the parsed trail rows.
 */

import type { TrailRow } from "./trail.js";
import type {
  AlternativeView,
  ChartSummary,
  DemographicsView,
  SessionView,
} from "./types.js";

export interface ChatMessage {
  speaker: "you" | "nurse";
  text: string;
}

/** Shown while a send failed in transit; `failedText` is replayed on retry. */
export interface RetryBanner {
  kind: "retry";
  text: string;
  failedText: string;
}

export interface NoticeBanner {
  kind: "notice";
  text: string;
}

export type Banner = RetryBanner | NoticeBanner;

export interface PickerOption {
  flowchart_id: string;
  name: string;
  specialty: string | null;
}

export interface UiSessionState {
  session: SessionView | null;
  transcript: ChatMessage[];
  compose: string;
  composeInvalid: boolean;
  pending: boolean;
  trail: TrailRow[];
  charts: ChartSummary[];
  /** Frozen at selection time: the agent's pick plus the alternatives it
   * offered, so the full set survives switching between them. */
  pickerOptions: PickerOption[];
  banner: Banner | null;
  inputLocked: boolean;
}

export function initialState(): UiSessionState {
  return {
    session: null,
    transcript: [],
    compose: "",
    composeInvalid: false,
    pending: false,
    trail: [],
    charts: [],
    pickerOptions: [],
    banner: null,
    inputLocked: false,
  };
}

export function ageInMonths(demographics: DemographicsView): number {
  return demographics.age_unit === "months"
    ? demographics.age_value
    : demographics.age_value * 12;
}

/** Under twelve years the patient is presumably not the one typing, so the
 * chat nudges toward caregiver phrasing. */
export function isPediatric(demographics: DemographicsView | null): boolean {
  return demographics !== null && ageInMonths(demographics) < 144;
}

function specialtyOf(charts: ChartSummary[], flowchartId: string): string | null {
  const summary = charts.find((c) => c.flowchart_id === flowchartId);
  return summary ? summary.specialty : null;
}

/** The picker offers the agent's pick first, then the alternatives in the
 * order the service ranked them. */
export function buildPickerOptions(
  view: SessionView,
  alternatives: AlternativeView[],
  charts: ChartSummary[],
): PickerOption[] {
  const options: PickerOption[] = [];
  if (view.flowchart_id !== null) {
    options.push({
      flowchart_id: view.flowchart_id,
      name: view.flowchart_name ?? view.flowchart_id,
      specialty: specialtyOf(charts, view.flowchart_id),
    });
  }
  for (const alternative of alternatives) {
    if (options.some((o) => o.flowchart_id === alternative.flowchart_id)) continue;
    options.push({
      flowchart_id: alternative.flowchart_id,
      name: alternative.name,
      specialty: specialtyOf(charts, alternative.flowchart_id),
    });
  }
  return options;
}
