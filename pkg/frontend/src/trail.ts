/** Trail parsing and presentation.
 *
 * The audit trail is served as ndjson, one interpreted turn per line. The
 * panel renders exactly what the service recorded: a malformed line becomes
 * an error row in place, and the lines around it stay intact.
 */

import type { ActionKind, TrailAction, TrailEntry, TrailVerdict } from "./types.js";

export interface VerdictBadge {
  axis: "topic" | "answered" | "answer" | "certainty";
  label: string;
}

export interface TrailEntryRow {
  kind: "entry";
  entry: TrailEntry;
  question: string;
  answer: string;
  badges: VerdictBadge[];
  actionLabel: string;
}

export interface TrailErrorRow {
  kind: "error";
  lineNumber: number;
  message: string;
}

export type TrailRow = TrailEntryRow | TrailErrorRow;

const ACTION_LABELS: Record<ActionKind, string> = {
  advance: "Advance",
  confirm_uncertain: "ConfirmUncertain",
  clarify: "Clarify",
  restate_off_topic: "RestateOffTopic",
};

export function actionLabel(action: TrailAction): string {
  const base = ACTION_LABELS[action.kind];
  if (action.kind === "advance" && action.answer !== undefined) {
    return `${base}: ${action.answer}`;
  }
  return base;
}

/** One badge per verdict axis, always four, so rows line up visually. */
export function verdictBadges(verdict: TrailVerdict): VerdictBadge[] {
  return [
    { axis: "topic", label: verdict.is_on_topic ? "on topic" : "off topic" },
    { axis: "answered", label: verdict.is_answered ? "answered" : "unanswered" },
    { axis: "answer", label: verdict.actual_answer ?? "no answer" },
    { axis: "certainty", label: verdict.is_uncertain ? "uncertain" : "confident" },
  ];
}

function isAnswer(value: unknown): value is "yes" | "no" {
  return value === "yes" || value === "no";
}

function asEntry(data: unknown): TrailEntry {
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    throw new Error("trail line is not an object");
  }
  const record = data as Record<string, unknown>;
  const verdict = record["verdict"];
  const action = record["action"];
  if (typeof verdict !== "object" || verdict === null) {
    throw new Error("trail line has no verdict");
  }
  if (typeof action !== "object" || action === null) {
    throw new Error("trail line has no action");
  }
  const verdictRecord = verdict as Record<string, unknown>;
  const actionRecord = action as Record<string, unknown>;
  const kind = actionRecord["kind"];
  if (
    kind !== "advance" &&
    kind !== "confirm_uncertain" &&
    kind !== "clarify" &&
    kind !== "restate_off_topic"
  ) {
    throw new Error(`unknown action kind ${JSON.stringify(kind)}`);
  }
  const answer = verdictRecord["actual_answer"];
  return {
    turn_index: Number(record["turn_index"]),
    flowchart_id: String(record["flowchart_id"]),
    node_id: String(record["node_id"]),
    question_text: String(record["question_text"]),
    utterance: String(record["utterance"]),
    verdict: {
      is_on_topic: Boolean(verdictRecord["is_on_topic"]),
      is_answered: Boolean(verdictRecord["is_answered"]),
      actual_answer: isAnswer(answer) ? answer : null,
      is_uncertain: Boolean(verdictRecord["is_uncertain"]),
    },
    action: isAnswer(actionRecord["answer"])
      ? { kind, answer: actionRecord["answer"] as "yes" | "no" }
      : { kind },
    timestamp: String(record["timestamp"]),
  };
}

function entryRow(entry: TrailEntry): TrailEntryRow {
  return {
    kind: "entry",
    entry,
    question: entry.question_text,
    answer: entry.utterance,
    badges: verdictBadges(entry.verdict),
    actionLabel: actionLabel(entry.action),
  };
}

/** Parse an ndjson trail into display rows. Empty input means a fresh
 * session and yields no rows at all. */
export function parseTrail(ndjson: string): TrailRow[] {
  const rows: TrailRow[] = [];
  if (ndjson === "") return rows;
  const lines = ndjson.split("\n");
  lines.forEach((line, i) => {
    if (line.trim() === "") return;
    try {
      rows.push(entryRow(asEntry(JSON.parse(line))));
    } catch (error) {
      rows.push({
        kind: "error",
        lineNumber: i + 1,
        message: error instanceof Error ? error.message : String(error),
      });
    }
  });
  return rows;
}

export function hasAdvanced(rows: TrailRow[]): boolean {
  return rows.some((row) => row.kind === "entry" && row.entry.action.kind === "advance");
}
