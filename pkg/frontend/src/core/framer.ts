/**
 * Microphone capture framing: resample to 16 kHz mono pcm16le and emit
 * 320-sample (20 ms) frames with strictly increasing sequence numbers.
 *
 * Muting suspends emission without consuming sequence numbers, so the
 * stream stays gap-free when it resumes.
 */

import { FRAME_SAMPLES, SAMPLE_RATE } from "./protocol.js";

export type FrameOut = (samples: Int16Array, captureMicros: number, seq: number) => void;

export class MicFramer {
  private pcm: number[] = [];
  private lastSample = 0;
  // resampler position over [lastSample, ...chunk]; 1 = first new sample
  private carryPos = 1;
  private seq = 0;
  private framesSeen = 0;
  muted = false;

  constructor(
    private deviceRate: number,
    private onFrame: FrameOut,
  ) {
    if (deviceRate <= 0) throw new Error("device sample rate must be positive");
  }

  get nextSeq(): number {
    return this.seq;
  }

  /** Feed one capture chunk of float samples in [-1, 1]. */
  pushFloat32(chunk: Float32Array): void {
    if (chunk.length === 0) return;
    const ratio = this.deviceRate / SAMPLE_RATE;
    const last = chunk.length; // index of the chunk's final sample in ext
    const ext = (i: number): number => (i === 0 ? this.lastSample : chunk[i - 1]);
    let pos = this.carryPos;
    while (pos <= last + 1e-9) {
      const lower = Math.min(Math.floor(pos), last);
      const upper = Math.min(lower + 1, last);
      const frac = pos - lower;
      const value = ext(lower) + (ext(upper) - ext(lower)) * frac;
      this.pcm.push(Math.max(-32768, Math.min(32767, Math.round(value * 32767))));
      pos += ratio;
    }
    this.carryPos = pos - last;
    this.lastSample = chunk[chunk.length - 1];
    this.drain();
  }

  private drain(): void {
    while (this.pcm.length >= FRAME_SAMPLES) {
      const frame = Int16Array.from(this.pcm.splice(0, FRAME_SAMPLES));
      const captureMicros = this.framesSeen * 20_000;
      this.framesSeen += 1;
      if (this.muted) continue; // time advances; seq does not
      this.onFrame(frame, captureMicros, this.seq);
      this.seq += 1;
    }
  }
}
