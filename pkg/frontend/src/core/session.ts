/**
 * Socket-agnostic client session core.
 *
 * Owns the handshake, outbound sequencing, capability honesty (a frame
 * kind the handshake did not declare is never sent), turn-view tracking,
 * and barge-in. The transport is injected, so this layer runs headlessly
 * against fixture transcripts.
 */

import {
  EV_AGENT_TURN_END,
  EV_CONTROL_END_UTTERANCE,
  EV_CONTROL_INTERRUPT,
  EV_ERROR,
  EV_SESSION_READY,
  EV_SESSION_START,
  EV_TEXT_USER,
  FRAME_KIND_AGENT_AUDIO,
  FRAME_KIND_USER_AUDIO,
  ProtocolError,
  encodeEnvelope,
  encodeFrame,
  parseEnvelope,
  parseFrame,
  type Envelope,
  type WireFrame,
} from "./protocol.js";
import { TurnTracker, type ClientTurnView } from "./turnview.js";

export interface Caps {
  audio_in: boolean;
  audio_out: boolean;
  text: boolean;
}

export interface OutboundSocket {
  send(data: string | ArrayBuffer): void;
}

export class CapabilityError extends Error {}

export interface SessionHooks {
  onReady?(sessionId: string, ready: Record<string, unknown>): void;
  onView?(view: ClientTurnView): void;
  onAgentAudio?(frame: WireFrame): void;
  onInterruptAck?(turn: number): void;
  onServerError?(code: string, message: string): void;
  onProtocolFault?(error: ProtocolError): void;
}

export class ClientSession {
  readonly tracker = new TurnTracker();
  sessionId: string | null = null;
  private envSeq = 0;
  private audioSeq = 0;

  constructor(
    private socket: OutboundSocket,
    readonly caps: Caps,
    private hooks: SessionHooks = {},
  ) {}

  start(): void {
    this.sendEvent(EV_SESSION_START, { caps: this.caps });
  }

  private sendEvent(event: string, data: Record<string, unknown>): void {
    this.socket.send(encodeEnvelope(event, this.sessionId, this.envSeq, data));
    this.envSeq += 1;
  }

  sendText(text: string): void {
    if (!this.caps.text) {
      throw new CapabilityError("text capability was not declared");
    }
    this.sendEvent(EV_TEXT_USER, { text });
    if (this.tracker.currentTurn >= 0) {
      const view = this.tracker.current;
      if (view && (view.status === "done" || view.status === "interrupted")) {
        this.hooks.onView?.(
          this.tracker.noteUserText(this.tracker.currentTurn + 1, text),
        );
        return;
      }
    }
    this.hooks.onView?.(
      this.tracker.noteUserText(Math.max(0, this.tracker.currentTurn + 1), text),
    );
  }

  sendAudioFrame(samples: Int16Array, captureMicros: number): void {
    if (!this.caps.audio_in) {
      throw new CapabilityError("audio_in capability was not declared");
    }
    if (this.sessionId === null) {
      throw new CapabilityError("session not ready");
    }
    this.socket.send(
      encodeFrame(
        FRAME_KIND_USER_AUDIO,
        this.sessionId,
        captureMicros,
        this.audioSeq,
        samples,
      ),
    );
    this.audioSeq += 1;
  }

  endUtterance(): void {
    this.sendEvent(EV_CONTROL_END_UTTERANCE, {});
  }

  /** Barge-in: the caller must also flush its playback queue. */
  interrupt(): void {
    this.sendEvent(EV_CONTROL_INTERRUPT, {});
  }

  /** Feed one raw transport message (text envelope or binary frame). */
  handleMessage(data: string | ArrayBuffer): void {
    if (typeof data !== "string") {
      this.handleBinary(data);
      return;
    }
    let envelope: Envelope;
    try {
      envelope = parseEnvelope(data);
    } catch (err) {
      this.hooks.onProtocolFault?.(err as ProtocolError);
      return;
    }
    this.handleEnvelope(envelope);
  }

  private handleBinary(data: ArrayBuffer): void {
    let frame: WireFrame;
    try {
      frame = parseFrame(data);
    } catch (err) {
      this.hooks.onProtocolFault?.(err as ProtocolError);
      return;
    }
    if (frame.kind === FRAME_KIND_AGENT_AUDIO) {
      this.hooks.onAgentAudio?.(frame);
    }
  }

  private handleEnvelope(envelope: Envelope): void {
    if (envelope.event === EV_SESSION_READY) {
      this.sessionId = String(envelope.data.session ?? "");
      this.hooks.onReady?.(this.sessionId, envelope.data);
      return;
    }
    if (envelope.event === EV_ERROR) {
      this.hooks.onServerError?.(
        String(envelope.data.code ?? "unknown"),
        String(envelope.data.message ?? ""),
      );
      return;
    }
    const view = this.tracker.apply(envelope);
    if (view) this.hooks.onView?.(view);
    if (envelope.event === EV_AGENT_TURN_END && envelope.data.interrupted) {
      this.hooks.onInterruptAck?.(Number(envelope.data.turn ?? -1));
    }
  }
}
