// Client-side session: mirrors the server phase (the server is
// authoritative; the mirror changes only on state messages), maps keyboard
// input to environment actions, and surfaces frames to the renderer.
//
// Transport-agnostic: a send function goes in, server messages are fed to
// handleServer. The DOM layer and the tests wire it to a real socket or to
// a capture array.

import {
  ClientMessage,
  FrameMessage,
  Phase,
  ServerMessage,
  StateMessage,
  outgoing,
} from "./protocol.js";

export interface SessionCallbacks {
  onState?: (state: StateMessage) => void;
  onFrame?: (frame: FrameMessage) => void;
  onEpisodeEnd?: (steps: number) => void;
  onError?: (code: string, message: string) => void;
}

export class ClientSession {
  phase: Phase = "idle";
  sessionId: string | null = null;
  mode: "sync" | "async" = "sync";
  inputMap: Record<string, number> = {};
  instructions = "";
  lastFrame: FrameMessage | null = null;
  lastOutcome: string | null = null;
  lastEpisodeId: string | null = null;
  heldAction: number | null = null;
  actionsSent = 0;

  private send: (msg: ClientMessage) => void;
  private callbacks: SessionCallbacks;
  private opened = false;

  constructor(send: (msg: ClientMessage) => void, callbacks: SessionCallbacks = {}) {
    this.send = send;
    this.callbacks = callbacks;
  }

  open(study: string, user: string, resumeSession?: string): void {
    this.opened = true;
    this.send(outgoing.startSession(study, user, resumeSession));
  }

  handleServer(msg: ServerMessage): void {
    switch (msg.type) {
      case "state": {
        // The only place the phase mirror may change.
        this.phase = msg.phase;
        this.sessionId = msg.session;
        this.mode = msg.mode;
        this.inputMap = msg.input_map ?? {};
        this.instructions = msg.instructions ?? "";
        this.lastOutcome = msg.last_outcome;
        this.lastEpisodeId = msg.last_episode_id;
        this.callbacks.onState?.(msg);
        break;
      }
      case "frame":
        this.lastFrame = msg;
        this.callbacks.onFrame?.(msg);
        break;
      case "episode_end":
        this.callbacks.onEpisodeEnd?.(msg.steps);
        break;
      case "error":
        this.callbacks.onError?.(msg.code, msg.message);
        break;
      case "tagged":
        break;
    }
  }

  // One mapped keydown emits exactly one action message while running;
  // everything else is ignored.
  keydown(code: string): boolean {
    if (this.phase !== "running" || !(code in this.inputMap)) {
      return false;
    }
    this.act(this.inputMap[code]);
    return true;
  }

  // Programmatic action (scripted clients, non-keyboard devices).
  act(action: number): void {
    this.heldAction = action;
    this.send(outgoing.action(action));
    this.actionsSent += 1;
  }

  startEpisode(): void {
    this.send(outgoing.startEpisode());
  }

  selectEnv(index: number): void {
    this.send(outgoing.selectEnv(index));
  }

  pause(): void {
    this.send(outgoing.pause());
  }

  unpause(): void {
    this.send(outgoing.unpause());
  }

  cancel(): void {
    this.send(outgoing.cancel());
  }

  save(confirm: boolean): void {
    this.send(outgoing.save(confirm));
  }

  tag(fields: { episode?: string; scope: "episode" | "step"; name: string; value?: boolean | string; step?: number }): void {
    this.send(outgoing.tag(fields));
  }

  endSession(): void {
    this.send(outgoing.endSession());
  }

  movementEnabled(): boolean {
    return this.phase === "running";
  }
}
