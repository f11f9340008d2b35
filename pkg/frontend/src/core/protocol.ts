/**
 * Wire protocol: JSON event envelopes and the binary audio frame layout.
 *
 * Binary frame (big-endian integers):
 *   byte 0      version 0x01
 *   byte 1      kind: 0x01 user audio, 0x02 agent audio
 *   bytes 2-17  session id (16 bytes)
 *   bytes 18-25 capture timestamp, microseconds since session epoch (u64)
 *   bytes 26-29 sequence number (u32)
 *   bytes 30-31 reserved, 0x0000
 *   bytes 32-   pcm16le mono 16 kHz samples
 */

export const WIRE_VERSION = 0x01;
export const FRAME_KIND_USER_AUDIO = 0x01;
export const FRAME_KIND_AGENT_AUDIO = 0x02;
export const FRAME_HEADER_LEN = 32;
export const SAMPLE_RATE = 16000;
export const FRAME_MS = 20;
export const FRAME_SAMPLES = (SAMPLE_RATE * FRAME_MS) / 1000; // 320

// client -> server
export const EV_SESSION_START = "session.start";
export const EV_TEXT_USER = "text.user";
export const EV_CONTROL_INTERRUPT = "control.interrupt";
export const EV_CONTROL_END_UTTERANCE = "control.end_utterance";

// server -> client
export const EV_SESSION_READY = "session.ready";
export const EV_TRANSCRIPT_PARTIAL = "transcript.partial";
export const EV_TRANSCRIPT_FINAL = "transcript.final";
export const EV_AGENT_TEXT_DELTA = "agent.text.delta";
export const EV_AGENT_TEXT_DONE = "agent.text.done";
export const EV_AGENT_TURN_START = "agent.turn.start";
export const EV_AGENT_TURN_END = "agent.turn.end";
export const EV_METRICS_TURN = "metrics.turn";
export const EV_ERROR = "error";

export class ProtocolError extends Error {
  constructor(message: string, readonly offset = 0) {
    super(`${message} (offset ${offset})`);
  }
}

export interface Envelope {
  event: string;
  session: string | null;
  seq: number;
  data: Record<string, unknown>;
}

export function encodeEnvelope(
  event: string,
  session: string | null,
  seq: number,
  data: Record<string, unknown>,
): string {
  return JSON.stringify({ event, session, seq, data });
}

export function parseEnvelope(text: string): Envelope {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (err) {
    throw new ProtocolError(`malformed envelope: ${(err as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new ProtocolError("malformed envelope: not an object");
  }
  const record = doc as Record<string, unknown>;
  if (typeof record.event !== "string" || !record.event) {
    throw new ProtocolError("malformed envelope: missing event");
  }
  const data = record.data ?? {};
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    throw new ProtocolError("malformed envelope: data not an object");
  }
  return {
    event: record.event,
    session: typeof record.session === "string" ? record.session : null,
    seq: typeof record.seq === "number" ? record.seq : 0,
    data: data as Record<string, unknown>,
  };
}

export function uuidToBytes(uuid: string): Uint8Array {
  const hex = uuid.replace(/-/g, "");
  if (hex.length !== 32 || /[^0-9a-fA-F]/.test(hex)) {
    throw new ProtocolError(`bad session id ${uuid}`);
  }
  const bytes = new Uint8Array(16);
  for (let i = 0; i < 16; i++) {
    bytes[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  }
  return bytes;
}

export function bytesToUuid(bytes: Uint8Array): string {
  const hex = Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
  return (
    `${hex.slice(0, 8)}-${hex.slice(8, 12)}-${hex.slice(12, 16)}` +
    `-${hex.slice(16, 20)}-${hex.slice(20)}`
  );
}

export interface WireFrame {
  kind: number;
  session: string;
  captureMicros: number;
  seq: number;
  /** pcm16le samples */
  payload: Int16Array;
}

export function encodeFrame(
  kind: number,
  session: string,
  captureMicros: number,
  seq: number,
  samples: Int16Array,
): ArrayBuffer {
  const buf = new ArrayBuffer(FRAME_HEADER_LEN + samples.length * 2);
  const view = new DataView(buf);
  view.setUint8(0, WIRE_VERSION);
  view.setUint8(1, kind);
  new Uint8Array(buf, 2, 16).set(uuidToBytes(session));
  view.setBigUint64(18, BigInt(Math.max(0, Math.floor(captureMicros))));
  view.setUint32(26, seq >>> 0);
  view.setUint16(30, 0);
  const out = new Uint8Array(buf, FRAME_HEADER_LEN);
  for (let i = 0; i < samples.length; i++) {
    const s = samples[i];
    out[2 * i] = s & 0xff;
    out[2 * i + 1] = (s >> 8) & 0xff;
  }
  return buf;
}

export function parseFrame(buf: ArrayBuffer): WireFrame {
  if (buf.byteLength < FRAME_HEADER_LEN) {
    throw new ProtocolError("truncated frame", buf.byteLength);
  }
  const view = new DataView(buf);
  const version = view.getUint8(0);
  if (version !== WIRE_VERSION) {
    throw new ProtocolError(`unknown version byte 0x${version.toString(16)}`, 0);
  }
  const kind = view.getUint8(1);
  if (kind !== FRAME_KIND_USER_AUDIO && kind !== FRAME_KIND_AGENT_AUDIO) {
    throw new ProtocolError(`unknown kind byte 0x${kind.toString(16)}`, 1);
  }
  if (view.getUint16(30) !== 0) {
    throw new ProtocolError("reserved bytes nonzero", 30);
  }
  const payloadBytes = buf.byteLength - FRAME_HEADER_LEN;
  if (payloadBytes % 2 !== 0) {
    throw new ProtocolError("odd payload byte length", FRAME_HEADER_LEN);
  }
  const payload = new Int16Array(payloadBytes / 2);
  const raw = new Uint8Array(buf, FRAME_HEADER_LEN);
  for (let i = 0; i < payload.length; i++) {
    payload[i] = (raw[2 * i] | (raw[2 * i + 1] << 8)) << 16 >> 16;
  }
  return {
    kind,
    session: bytesToUuid(new Uint8Array(buf, 2, 16)),
    captureMicros: Number(view.getBigUint64(18)),
    seq: view.getUint32(26),
    payload,
  };
}
