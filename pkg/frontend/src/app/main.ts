/**
 * Browser shell: wires the session core to a WebSocket, the microphone
 * (AudioWorklet capture), and WebAudio playback.
 */

import {
  EV_CONTROL_END_UTTERANCE,
  FRAME_MS,
  SAMPLE_RATE,
} from "../core/protocol.js";
import { MicFramer } from "../core/framer.js";
import { PlaybackQueue } from "../core/playback.js";
import { CapabilityError, ClientSession } from "../core/session.js";
import type { ClientTurnView } from "../core/turnview.js";

const $ = (id: string) => document.getElementById(id)!;

let ws: WebSocket | null = null;
let session: ClientSession | null = null;
let framer: MicFramer | null = null;
let audioCtx: AudioContext | null = null;
let playCtx: AudioContext | null = null;
let playback: PlaybackQueue | null = null;
let playbackTimer: number | null = null;
let micStream: MediaStream | null = null;
let micEnabled = false;
let playHorizon = 0; // AudioContext time when queued audio ends
let faultCount = 0; // skipped undecodable frames, surfaced in the debug row

function setStatus(text: string, kind = "") {
  const el = $("status");
  el.textContent = text;
  el.className = `pill ${kind}`;
}

function banner(text: string, show = true) {
  const el = $("banner");
  el.textContent = text;
  el.style.display = show ? "block" : "none";
}

function renderView(view: ClientTurnView) {
  $("turn-no").textContent = String(view.turn);
  $("user-text").textContent = view.userText || "…";
  $("agent-text").textContent = view.agentText || "…";
  setStatus(view.status, view.status);
  $("latency").textContent =
    view.latencyMs !== null ? `${(view.latencyMs / 1000).toFixed(2)} s` : "–";
}

function startPlaybackPump() {
  playCtx = playCtx ?? new AudioContext({ sampleRate: SAMPLE_RATE });
  playback = new PlaybackQueue((frame) => {
    const ctx = playCtx!;
    const buffer = ctx.createBuffer(1, frame.samples.length, SAMPLE_RATE);
    const channel = buffer.getChannelData(0);
    for (let i = 0; i < frame.samples.length; i++) {
      channel[i] = frame.samples[i] / 32768;
    }
    const source = ctx.createBufferSource();
    source.buffer = buffer;
    source.connect(ctx.destination);
    const at = Math.max(ctx.currentTime, playHorizon);
    source.start(at);
    playHorizon = at + buffer.duration;
  }, FRAME_MS, FRAME_MS);
  playbackTimer = window.setInterval(() => {
    playback!.tick(performance.now());
  }, 5);
}

async function enableMicrophone(): Promise<boolean> {
  try {
    micStream = await navigator.mediaDevices.getUserMedia({ audio: true });
  } catch {
    banner("microphone permission denied — text-only mode");
    return false;
  }
  micStream.getAudioTracks()[0]?.addEventListener("ended", () => {
    // device unplugged mid-stream: close the utterance, tell the user
    if (micEnabled) session?.endUtterance();
    micEnabled = false;
    if (framer) framer.muted = true;
    banner("microphone lost — reconnect the device and retry");
  });
  audioCtx = new AudioContext();
  await audioCtx.audioWorklet.addModule("./pcm-capture-worklet.js");
  const sourceNode = audioCtx.createMediaStreamSource(micStream);
  const worklet = new AudioWorkletNode(audioCtx, "pcm-capture");
  framer = new MicFramer(audioCtx.sampleRate, (samples, captureMicros) => {
    try {
      session?.sendAudioFrame(samples, captureMicros);
    } catch (err) {
      if (!(err instanceof CapabilityError)) throw err;
    }
  });
  framer.muted = true; // push-to-talk: only stream while the button is held
  worklet.port.onmessage = (msg: MessageEvent<Float32Array>) => {
    framer?.pushFloat32(msg.data);
  };
  sourceNode.connect(worklet);
  return true;
}

async function connect() {
  const url = ($("url") as HTMLInputElement).value;
  banner("", false);
  const micOk = await enableMicrophone();
  const caps = { audio_in: micOk, audio_out: true, text: true };

  ws = new WebSocket(url);
  ws.binaryType = "arraybuffer";
  session = new ClientSession(
    { send: (data) => ws!.send(data) },
    caps,
    {
      onReady: (sessionId) => {
        $("session-id").textContent = sessionId;
        setStatus("ready");
        ($("send") as HTMLButtonElement).disabled = false;
        ($("talk") as HTMLButtonElement).disabled = !micOk;
        ($("interrupt") as HTMLButtonElement).disabled = false;
      },
      onView: renderView,
      onAgentAudio: (frame) => playback?.push(frame.payload),
      onInterruptAck: () => setStatus("interrupted", "interrupted"),
      onServerError: (code, message) => banner(`server error [${code}]: ${message}`),
      onProtocolFault: () => {
        faultCount += 1;
        $("faults").textContent = String(faultCount);
      },
    },
  );
  ws.onopen = () => {
    startPlaybackPump();
    session!.start();
  };
  ws.onmessage = (msg) => session!.handleMessage(msg.data);
  ws.onclose = (ev) => {
    setStatus("disconnected");
    if (ev.code === 4002) banner(`pipeline build failure: ${ev.reason}`);
    else if (ev.code !== 1000 && ev.code !== 1001) banner(`closed (${ev.code}) ${ev.reason}`);
    ($("connect") as HTMLButtonElement).textContent = "reconnect";
  };
  ws.onerror = () => banner("connection failed — check the server URL and retry");
}

function wireUi() {
  $("connect").addEventListener("click", () => void connect());
  $("send").addEventListener("click", () => {
    const input = $("text-input") as HTMLInputElement;
    if (!input.value.trim()) return;
    session?.sendText(input.value);
    input.value = "";
  });
  ($("text-input") as HTMLInputElement).addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") $("send").click();
  });
  const talk = $("talk") as HTMLButtonElement;
  const startTalk = () => {
    if (!framer) return;
    micEnabled = true;
    framer.muted = false;
    talk.classList.add("active");
    setStatus("listening", "listening");
  };
  const stopTalk = () => {
    if (!framer || !micEnabled) return;
    micEnabled = false;
    framer.muted = true;
    talk.classList.remove("active");
    session?.endUtterance();
  };
  talk.addEventListener("mousedown", startTalk);
  talk.addEventListener("touchstart", startTalk);
  talk.addEventListener("mouseup", stopTalk);
  talk.addEventListener("mouseleave", stopTalk);
  talk.addEventListener("touchend", stopTalk);
  $("interrupt").addEventListener("click", () => {
    playback?.flush();
    playHorizon = 0;
    session?.interrupt();
  });
}

wireUi();
