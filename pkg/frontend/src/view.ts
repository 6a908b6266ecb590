/** DOM rendering.
 *
 * The whole screen is re-rendered from UiSessionState after every completed
 * action; nothing in here talks to the network or interprets answers. Class
 * names double as the contract for the test suite.
 */

import { hasAdvanced } from "./trail.js";
import type { TrailRow } from "./trail.js";
import { isPediatric } from "./state.js";
import type { UiSessionState } from "./state.js";
import type { DemographicsInput, SessionView } from "./types.js";

export interface ViewHandlers {
  onStart(demographics: DemographicsInput | null): void;
  onComposeInput(value: string): void;
  onSend(): void;
  onRetry(): void;
  onChooseChart(flowchartId: string): void;
  onDemographics(demographics: DemographicsInput): void;
}

// Placeholder wording; the final copy needs clinical review before launch.
const DISCLAIMER =
  "This tool offers general guidance, not a diagnosis. " +
  "In an emergency, contact your local emergency number immediately.";

const CAREGIVER_HINT =
  "Answering for a child? Describe what you observe as their caregiver.";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function demographicsFields(prefix: string): HTMLElement {
  const wrap = el("div", "demographics-fields");
  const sex = el("select");
  sex.id = `${prefix}-sex`;
  for (const value of ["female", "male"]) {
    const option = el("option", undefined, value);
    option.setAttribute("value", value);
    sex.appendChild(option);
  }
  const age = el("input");
  age.id = `${prefix}-age`;
  age.setAttribute("type", "number");
  age.setAttribute("min", "1");
  const unit = el("select");
  unit.id = `${prefix}-unit`;
  for (const value of ["years", "months"]) {
    const option = el("option", undefined, value);
    option.setAttribute("value", value);
    unit.appendChild(option);
  }
  wrap.append(sex, age, unit);
  return wrap;
}

function readDemographics(prefix: string): DemographicsInput | null {
  const sex = document.getElementById(`${prefix}-sex`) as HTMLSelectElement | null;
  const age = document.getElementById(`${prefix}-age`) as HTMLInputElement | null;
  const unit = document.getElementById(`${prefix}-unit`) as HTMLSelectElement | null;
  if (!sex || !age || !unit) return null;
  const value = Number(age.value);
  if (!Number.isInteger(value) || value <= 0) return null;
  if (sex.value !== "male" && sex.value !== "female") return null;
  if (unit.value !== "years" && unit.value !== "months") return null;
  return { sex: sex.value, age_value: value, age_unit: unit.value };
}

function renderStartScreen(state: UiSessionState, handlers: ViewHandlers): HTMLElement {
  const screen = el("section", "start-screen");
  screen.appendChild(el("p", "start-intro", "Tell us who the conversation is about."));
  if (state.banner !== null) {
    screen.appendChild(el("p", "start-error", state.banner.text));
  }
  const form = el("form", "start-form");
  form.appendChild(demographicsFields("start"));
  const begin = el("button", "start-begin", "Begin");
  begin.setAttribute("type", "submit");
  form.appendChild(begin);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const demographics = readDemographics("start");
    if (demographics) handlers.onStart(demographics);
  });
  screen.appendChild(form);
  const skip = el("button", "start-skip", "Skip for now");
  skip.setAttribute("type", "button");
  skip.addEventListener("click", () => handlers.onStart(null));
  screen.appendChild(skip);
  return screen;
}

function renderTranscript(state: UiSessionState): HTMLElement {
  const list = el("ol", "transcript");
  for (const message of state.transcript) {
    const item = el("li", `message message-${message.speaker}`);
    item.appendChild(el("span", "message-speaker", message.speaker));
    item.appendChild(el("span", "message-text", message.text));
    list.appendChild(item);
  }
  return list;
}

function renderRecommendation(view: SessionView): HTMLElement {
  const card = el("div", "recommendation-card");
  card.appendChild(el("h2", "recommendation-heading", "Recommendation"));
  if (view.flowchart_name !== null) {
    card.appendChild(el("p", "recommendation-chart", view.flowchart_name));
  }
  card.appendChild(el("p", "recommendation-text", view.recommendation ?? ""));
  return card;
}

function renderPicker(state: UiSessionState, handlers: ViewHandlers): HTMLElement {
  const view = state.session as SessionView;
  const picker = el("fieldset", "picker");
  picker.appendChild(el("legend", "picker-legend", "Topic to go through"));
  for (const option of state.pickerOptions) {
    const label = el("label", "picker-option");
    label.setAttribute("data-flowchart-id", option.flowchart_id);
    const radio = el("input");
    radio.setAttribute("type", "radio");
    radio.setAttribute("name", "picker");
    radio.setAttribute("value", option.flowchart_id);
    if (option.flowchart_id === view.flowchart_id) {
      radio.setAttribute("checked", "checked");
      (radio as HTMLInputElement).checked = true;
    }
    radio.addEventListener("change", () => handlers.onChooseChart(option.flowchart_id));
    label.appendChild(radio);
    label.appendChild(el("span", "picker-option-name", option.name));
    if (option.specialty !== null) {
      label.appendChild(el("span", "picker-option-specialty", option.specialty));
    }
    picker.appendChild(label);
  }
  return picker;
}

function renderTrailRow(row: TrailRow): HTMLElement {
  if (row.kind === "error") {
    const item = el("li", "trail-row trail-row-error");
    item.appendChild(
      el("span", "trail-error-message", `line ${row.lineNumber}: ${row.message}`),
    );
    return item;
  }
  const item = el("li", "trail-row");
  item.setAttribute("data-turn-index", String(row.entry.turn_index));
  item.appendChild(el("span", "trail-question", row.question));
  item.appendChild(el("span", "trail-answer", row.answer));
  const badges = el("span", "trail-badges");
  for (const badge of row.badges) {
    const node = el("span", `badge badge-${badge.axis}`, badge.label);
    node.setAttribute("data-axis", badge.axis);
    node.setAttribute("data-value", badge.label);
    badges.appendChild(node);
  }
  item.appendChild(badges);
  const action = el("span", "action-badge", row.actionLabel);
  action.setAttribute("data-kind", row.kind === "entry" ? row.entry.action.kind : "");
  item.appendChild(action);
  return item;
}

function renderTrailPanel(state: UiSessionState): HTMLElement {
  const panel = el("details", "trail-panel"); // collapsed unless the user opens it
  panel.appendChild(el("summary", "trail-summary", "How each answer was read"));
  if (state.trail.length === 0) {
    panel.appendChild(el("p", "trail-empty", "No answers recorded yet."));
    return panel;
  }
  const list = el("ol", "trail-rows");
  for (const row of state.trail) list.appendChild(renderTrailRow(row));
  panel.appendChild(list);
  return panel;
}

function renderDemographicsForm(handlers: ViewHandlers): HTMLElement {
  const form = el("form", "demographics-form");
  form.appendChild(demographicsFields("demo"));
  const submit = el("button", "demographics-submit", "Save details");
  submit.setAttribute("type", "submit");
  form.appendChild(submit);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const demographics = readDemographics("demo");
    if (demographics) handlers.onDemographics(demographics);
  });
  return form;
}

function renderCompose(state: UiSessionState, handlers: ViewHandlers): HTMLElement {
  const view = state.session as SessionView;
  const disabled = state.pending || state.inputLocked || view.closed;
  const form = el("form", "compose-form");
  const input = el("input", "compose-input");
  input.setAttribute("type", "text");
  input.setAttribute("placeholder", "Type your reply");
  input.value = state.compose;
  if (state.composeInvalid) input.setAttribute("data-invalid", "true");
  if (disabled) input.setAttribute("disabled", "disabled");
  input.addEventListener("input", () => handlers.onComposeInput(input.value));
  form.appendChild(input);
  const send = el("button", "send-button", "Send");
  send.setAttribute("type", "submit");
  if (disabled) send.setAttribute("disabled", "disabled");
  form.appendChild(send);
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    handlers.onSend();
  });
  return form;
}

function renderChatScreen(state: UiSessionState, handlers: ViewHandlers): HTMLElement {
  const view = state.session as SessionView;
  const screen = el("section", "chat-screen");
  if (isPediatric(view.demographics)) {
    screen.appendChild(el("p", "caregiver-hint", CAREGIVER_HINT));
  }
  screen.appendChild(renderTranscript(state));
  if (view.question !== null) {
    const pin = el("div", "question-pin");
    pin.appendChild(el("span", "question-pin-label", "Current question"));
    pin.appendChild(el("span", "question-pin-text", view.question));
    screen.appendChild(pin);
  }
  if (view.phase === "completed") {
    screen.appendChild(renderRecommendation(view));
  }
  if (view.phase === "no_flowchart_escalation") {
    screen.appendChild(
      el(
        "div",
        "seek-care-notice",
        "No self-triage topic fits what you described. Please seek medical advice directly.",
      ),
    );
  }
  const pickerVisible =
    view.phase === "navigating" &&
    state.pickerOptions.length > 0 &&
    !hasAdvanced(state.trail);
  if (pickerVisible) {
    screen.appendChild(renderPicker(state, handlers));
  }
  if (view.phase === "collecting_demographics") {
    screen.appendChild(renderDemographicsForm(handlers));
  }
  if (state.banner !== null && state.banner.kind === "retry") {
    const banner = el("div", "retry-banner");
    banner.appendChild(el("span", "retry-text", state.banner.text));
    const retry = el("button", "retry-button", "Retry");
    retry.setAttribute("type", "button");
    retry.addEventListener("click", () => handlers.onRetry());
    banner.appendChild(retry);
    screen.appendChild(banner);
  }
  if (state.banner !== null && state.banner.kind === "notice") {
    screen.appendChild(el("div", "completion-notice", state.banner.text));
  }
  screen.appendChild(renderCompose(state, handlers));
  screen.appendChild(renderTrailPanel(state));
  return screen;
}

export function render(root: HTMLElement, state: UiSessionState, handlers: ViewHandlers): void {
  root.textContent = "";
  const app = el("div", "app");
  app.appendChild(el("h1", "app-title", "Self-triage chat"));
  if (state.session === null) {
    app.appendChild(renderStartScreen(state, handlers));
  } else {
    app.appendChild(renderChatScreen(state, handlers));
  }
  app.appendChild(el("footer", "disclaimer", DISCLAIMER));
  root.appendChild(app);
}
