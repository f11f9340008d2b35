/**
 * Agent audio playback scheduling with an injectable clock.
 *
 * Frames are handed to the device sink just-in-time (bounded lookahead)
 * so a barge-in can cut playback immediately: flush() drops everything
 * still pending, and nothing more reaches the sink afterwards. At most
 * the one frame already scheduled inside the lookahead window can play.
 */

export interface ScheduledFrame {
  samples: Int16Array;
  /** playback time on the caller's clock, milliseconds */
  atMs: number;
}

export type DeviceSink = (frame: ScheduledFrame) => void;

export const DEFAULT_FRAME_MS = 20;
export const DEFAULT_LEAD_MS = 20; // hand at most one frame ahead of time

export class PlaybackQueue {
  private pending: Int16Array[] = [];
  private nextAtMs: number | null = null;
  enqueuedToDevice = 0;
  flushed = 0;

  constructor(
    private sink: DeviceSink,
    private frameMs = DEFAULT_FRAME_MS,
    private leadMs = DEFAULT_LEAD_MS,
  ) {}

  get pendingCount(): number {
    return this.pending.length;
  }

  push(samples: Int16Array): void {
    this.pending.push(samples);
  }

  /** Move frames whose playback time falls inside the lookahead window. */
  tick(nowMs: number): void {
    while (this.pending.length > 0) {
      const at = this.nextAtMs ?? nowMs;
      if (at > nowMs + this.leadMs) return;
      const samples = this.pending.shift()!;
      const startAt = Math.max(at, nowMs);
      this.sink({ samples, atMs: startAt });
      this.enqueuedToDevice += 1;
      this.nextAtMs = startAt + this.frameMs;
    }
  }

  /** Barge-in: drop all pending audio; the schedule restarts fresh. */
  flush(): void {
    this.flushed += this.pending.length;
    this.pending = [];
    this.nextAtMs = null;
  }
}
