/** Controller: owns the state, calls the API, re-renders after every step.
 *
 * All triage behaviour (chart choice, answer reading, recommendations) comes
 * from the service; this class only sequences requests and mirrors replies.
 * A single pending flag serialises user actions, so at most one POST is in
 * flight per session at any moment.
 */

import { ApiError, TriageApi } from "./api.js";
import { buildPickerOptions, initialState } from "./state.js";
import type { UiSessionState } from "./state.js";
import { parseTrail } from "./trail.js";
import type { DemographicsInput, PhaseName, SessionView } from "./types.js";
import { render } from "./view.js";
import type { ViewHandlers } from "./view.js";

const COMPLETION_NOTICE = "This conversation has already finished.";
const NETWORK_NOTICE = "Could not reach the service. Check your connection and try again.";

export class TriageChatApp {
  readonly state: UiSessionState;
  private readonly api: TriageApi;
  private readonly root: HTMLElement;
  private readonly handlers: ViewHandlers;
  private inflight: Promise<void> | null = null;
  private failedText: string | null = null;

  constructor(root: HTMLElement, api: TriageApi) {
    this.root = root;
    this.api = api;
    this.state = initialState();
    this.handlers = {
      onStart: (demographics) => this.start(demographics),
      onComposeInput: (value) => {
        this.state.compose = value;
        this.state.composeInvalid = false;
      },
      onSend: () => this.sendFromCompose(),
      onRetry: () => this.retry(),
      onChooseChart: (flowchartId) => this.chooseChart(flowchartId),
      onDemographics: (demographics) => this.submitDemographics(demographics),
    };
  }

  /** Fetch the chart catalogue (for picker specialties) and draw the start
   * screen. The catalogue is cosmetic, so a failure here is not fatal. */
  async boot(): Promise<void> {
    try {
      this.state.charts = await this.api.listFlowcharts();
    } catch {
      this.state.charts = [];
    }
    this.render();
  }

  /** Resolves once every action started so far has finished. */
  async idle(): Promise<void> {
    while (this.inflight !== null) {
      const current = this.inflight;
      await current;
      if (this.inflight === current) this.inflight = null;
    }
  }

  private render(): void {
    render(this.root, this.state, this.handlers);
  }

  /** Runs one action at a time; a click while pending is dropped, matching
   * the disabled controls the user is looking at. */
  private exclusive(task: () => Promise<void>): void {
    if (this.state.pending) return;
    this.state.pending = true;
    this.render();
    this.inflight = (async () => {
      try {
        await task();
      } finally {
        this.state.pending = false;
        this.render();
      }
    })();
  }

  start(demographics: DemographicsInput | null): void {
    this.exclusive(async () => {
      try {
        const envelope = await this.api.createSession(demographics);
        this.state.session = envelope.session;
        if (envelope.reply !== null) {
          this.state.transcript.push({ speaker: "nurse", text: envelope.reply });
        }
        this.state.banner = null;
      } catch (error) {
        this.state.banner = { kind: "notice", text: describeFailure(error) };
      }
    });
  }

  /** Programmatic send, same path the compose box uses. */
  send(text: string): void {
    this.sendText(text, true);
  }

  private sendFromCompose(): void {
    const text = this.state.compose.trim();
    if (text === "") {
      // Client-side block: no request leaves the browser for an empty box.
      this.state.composeInvalid = true;
      this.render();
      return;
    }
    this.sendText(text, true);
  }

  private submitDemographics(demographics: DemographicsInput): void {
    this.sendText(
      `${demographics.sex}, ${demographics.age_value} ${demographics.age_unit}`,
      true,
    );
  }

  private retry(): void {
    if (this.failedText === null) return;
    const text = this.failedText;
    // The typed line is already in the transcript from the first attempt.
    this.sendText(text, false);
  }

  private sendText(text: string, echo: boolean): void {
    const view = this.state.session;
    if (view === null) return;
    this.exclusive(async () => {
      if (echo) this.state.transcript.push({ speaker: "you", text });
      const before = view.phase;
      try {
        const envelope = await this.api.sendMessage(view.session_id, text);
        this.state.compose = "";
        this.state.composeInvalid = false;
        this.state.banner = null;
        this.failedText = null;
        if (envelope.reply !== null) {
          this.state.transcript.push({ speaker: "nurse", text: envelope.reply });
        }
        this.applyView(envelope.session, before);
        await this.refreshTrail();
      } catch (error) {
        this.handleSendFailure(error, text);
      }
    });
  }

  chooseChart(flowchartId: string): void {
    const view = this.state.session;
    if (view === null || view.flowchart_id === flowchartId) return;
    this.exclusive(async () => {
      const before = view.phase;
      try {
        const envelope = await this.api.switchChart(view.session_id, flowchartId);
        if (envelope.reply !== null) {
          this.state.transcript.push({ speaker: "nurse", text: envelope.reply });
        }
        this.applyView(envelope.session, before);
        await this.refreshTrail();
      } catch (error) {
        if (error instanceof ApiError && error.status === 409) {
          this.state.banner = { kind: "notice", text: error.detail };
        } else {
          this.state.banner = { kind: "notice", text: describeFailure(error) };
        }
      }
    });
  }

  private applyView(view: SessionView, before: PhaseName): void {
    this.state.session = view;
    if (view.phase === "navigating" && before !== "navigating") {
      // Selection time: freeze the agent's pick plus its alternatives so
      // the full option set survives switching between them.
      this.state.pickerOptions = buildPickerOptions(view, view.alternatives, this.state.charts);
    }
  }

  private handleSendFailure(error: unknown, text: string): void {
    if (error instanceof ApiError) {
      if (error.status === 409) {
        this.state.inputLocked = true;
        this.state.banner = { kind: "notice", text: COMPLETION_NOTICE };
      } else {
        this.state.banner = { kind: "notice", text: error.detail };
      }
      this.failedText = null;
      return;
    }
    // Transport failure: the service never saw the message, offer a retry.
    this.failedText = text;
    this.state.banner = { kind: "retry", text: NETWORK_NOTICE, failedText: text };
  }

  /** The trail belongs to the service; re-fetch it after every turn instead
   * of guessing rows locally. A failed fetch keeps the previous rows. */
  private async refreshTrail(): Promise<void> {
    const view = this.state.session;
    if (view === null) return;
    try {
      this.state.trail = parseTrail(await this.api.fetchTrail(view.session_id));
    } catch {
      // keep what we have; the next turn refreshes again
    }
  }
}

function describeFailure(error: unknown): string {
  if (error instanceof ApiError) return error.detail;
  return NETWORK_NOTICE;
}

export { ApiError, TriageApi };
