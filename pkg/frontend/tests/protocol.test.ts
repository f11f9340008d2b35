import { describe, expect, it } from "vitest";

import {
  FRAME_KIND_AGENT_AUDIO,
  FRAME_KIND_USER_AUDIO,
  ProtocolError,
  bytesToUuid,
  encodeEnvelope,
  encodeFrame,
  parseEnvelope,
  parseFrame,
  uuidToBytes,
} from "../src/core/protocol.js";

const SESSION = "0f1e2d3c-4b5a-6978-8796-a5b4c3d2e1f0";

describe("envelopes", () => {
  it("round-trips", () => {
    const text = encodeEnvelope("agent.text.delta", SESSION, 7, { turn: 1, text: "hi" });
    const env = parseEnvelope(text);
    expect(env.event).toBe("agent.text.delta");
    expect(env.session).toBe(SESSION);
    expect(env.seq).toBe(7);
    expect(env.data).toEqual({ turn: 1, text: "hi" });
  });

  it("rejects malformed JSON", () => {
    expect(() => parseEnvelope("{oops")).toThrow(ProtocolError);
  });

  it("rejects missing event", () => {
    expect(() => parseEnvelope('{"data":{}}')).toThrow(/missing event/);
  });
});

describe("binary frames", () => {
  it("canonical 20 ms frame is 672 bytes", () => {
    const samples = new Int16Array(320).map((_, i) => (i * 37) % 1000 - 500);
    const buf = encodeFrame(FRAME_KIND_USER_AUDIO, SESSION, 123456, 42, samples);
    expect(buf.byteLength).toBe(672);
    const frame = parseFrame(buf);
    expect(frame.kind).toBe(FRAME_KIND_USER_AUDIO);
    expect(frame.session).toBe(SESSION);
    expect(frame.captureMicros).toBe(123456);
    expect(frame.seq).toBe(42);
    expect(Array.from(frame.payload)).toEqual(Array.from(samples));
  });

  it("round-trips negative samples", () => {
    const samples = Int16Array.from([-32768, -1, 0, 1, 32767, -12345]);
    const frame = parseFrame(encodeFrame(FRAME_KIND_AGENT_AUDIO, SESSION, 0, 0, samples));
    expect(Array.from(frame.payload)).toEqual(Array.from(samples));
  });

  it("rejects bad version, kind, reserved bytes", () => {
    const good = new Uint8Array(
      encodeFrame(FRAME_KIND_USER_AUDIO, SESSION, 0, 0, new Int16Array(4)),
    );
    const badVersion = good.slice();
    badVersion[0] = 0x7f;
    expect(() => parseFrame(badVersion.buffer)).toThrow(/unknown version/);
    const badKind = good.slice();
    badKind[1] = 0x09;
    expect(() => parseFrame(badKind.buffer)).toThrow(/unknown kind/);
    const badReserved = good.slice();
    badReserved[30] = 1;
    expect(() => parseFrame(badReserved.buffer)).toThrow(/reserved/);
    expect(() => parseFrame(new ArrayBuffer(10))).toThrow(/truncated/);
  });

  it("uuid bytes round-trip", () => {
    expect(bytesToUuid(uuidToBytes(SESSION))).toBe(SESSION);
  });
});
