/**
 * Per-turn view state driven by server events.
 *
 * Agent deltas may arrive out of order; they are buffered by sequence
 * number and appended in order, so the rendered text always equals the
 * in-order concatenation and only ever grows until done/interrupted.
 */

import {
  EV_AGENT_TEXT_DELTA,
  EV_AGENT_TEXT_DONE,
  EV_AGENT_TURN_END,
  EV_AGENT_TURN_START,
  EV_METRICS_TURN,
  EV_TRANSCRIPT_FINAL,
  EV_TRANSCRIPT_PARTIAL,
  type Envelope,
} from "./protocol.js";

export type TurnStatus = "listening" | "thinking" | "speaking" | "done" | "interrupted";

export interface ClientTurnView {
  turn: number;
  userText: string;
  userFinal: boolean;
  agentText: string;
  latencyMs: number | null;
  status: TurnStatus;
}

interface TurnInternal {
  view: ClientTurnView;
  nextDeltaSeq: number;
  pendingDeltas: Map<number, string>;
}

export class TurnTracker {
  private turns = new Map<number, TurnInternal>();
  currentTurn = -1;

  private turn(n: number): TurnInternal {
    let state = this.turns.get(n);
    if (!state) {
      state = {
        view: {
          turn: n,
          userText: "",
          userFinal: false,
          agentText: "",
          latencyMs: null,
          status: "listening",
        },
        nextDeltaSeq: 0,
        pendingDeltas: new Map(),
      };
      this.turns.set(n, state);
    }
    if (n > this.currentTurn) this.currentTurn = n;
    return state;
  }

  view(n: number): ClientTurnView | undefined {
    return this.turns.get(n)?.view;
  }

  get current(): ClientTurnView | undefined {
    return this.turns.get(this.currentTurn)?.view;
  }

  /** Record locally-sent user text (no transcript events will follow). */
  noteUserText(turn: number, text: string): ClientTurnView {
    const state = this.turn(turn);
    state.view.userText = text;
    state.view.userFinal = true;
    state.view.status = "thinking";
    return state.view;
  }

  /** Apply one server event; returns the updated view, if any. */
  apply(envelope: Envelope): ClientTurnView | null {
    const turnNo = envelope.data.turn;
    if (typeof turnNo !== "number") return null;
    const state = this.turn(turnNo);
    const view = state.view;
    switch (envelope.event) {
      case EV_TRANSCRIPT_PARTIAL:
        view.userText = String(envelope.data.text ?? "");
        view.status = "listening";
        break;
      case EV_TRANSCRIPT_FINAL:
        view.userText = String(envelope.data.text ?? "");
        view.userFinal = true;
        if (view.status === "listening") view.status = "thinking";
        break;
      case EV_AGENT_TEXT_DELTA:
        this.appendDelta(state, envelope);
        break;
      case EV_AGENT_TEXT_DONE:
        break;
      case EV_AGENT_TURN_START:
        view.status = "speaking";
        break;
      case EV_AGENT_TURN_END:
        view.status = envelope.data.interrupted ? "interrupted" : "done";
        break;
      case EV_METRICS_TURN: {
        const ms = envelope.data.eos_to_first_audio_ms;
        if (typeof ms === "number") view.latencyMs = ms;
        break;
      }
      default:
        return null;
    }
    return view;
  }

  private appendDelta(state: TurnInternal, envelope: Envelope): void {
    if (state.view.status === "done" || state.view.status === "interrupted") {
      return; // agent text never grows after the turn closed
    }
    const seq = typeof envelope.data.seq === "number" ? envelope.data.seq : 0;
    const text = String(envelope.data.text ?? "");
    if (seq < state.nextDeltaSeq) return; // duplicate
    state.pendingDeltas.set(seq, text);
    while (state.pendingDeltas.has(state.nextDeltaSeq)) {
      state.view.agentText += state.pendingDeltas.get(state.nextDeltaSeq)!;
      state.pendingDeltas.delete(state.nextDeltaSeq);
      state.nextDeltaSeq += 1;
    }
  }
}
