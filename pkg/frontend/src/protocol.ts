// Wire protocol shared with the collection server. Every document carries
// a protocol version field; the server is authoritative for session state.

export const PROTOCOL_VERSION = 1;

export type Phase = "idle" | "running" | "paused" | "awaiting_save" | "ended";

export interface StateMessage {
  v: number;
  type: "state";
  phase: Phase;
  session: string;
  study: string;
  env_index: number;
  input_map: Record<string, number>;
  mode: "sync" | "async";
  instructions: string;
  last_outcome: string | null;
  last_episode_id: string | null;
}

export interface FrameMessage {
  v: number;
  type: "frame";
  step: number;
  image: string; // base64 PNG
  reward: number;
}

export interface EpisodeEndMessage {
  v: number;
  type: "episode_end";
  steps: number;
}

export interface ErrorMessage {
  v: number;
  type: "error";
  code: string;
  message: string;
}

export interface TaggedMessage {
  v: number;
  type: "tagged";
  episode: string;
}

export type ServerMessage =
  | StateMessage
  | FrameMessage
  | EpisodeEndMessage
  | ErrorMessage
  | TaggedMessage;

export interface ClientMessage {
  v: number;
  type: string;
  [key: string]: unknown;
}

export function parseServerMessage(data: string): ServerMessage | null {
  let doc: unknown;
  try {
    doc = JSON.parse(data);
  } catch {
    return null;
  }
  const msg = doc as ServerMessage;
  if (!msg || typeof msg.type !== "string" || msg.v !== PROTOCOL_VERSION) {
    return null;
  }
  return msg;
}

function message(type: string, fields: Record<string, unknown> = {}): ClientMessage {
  return { v: PROTOCOL_VERSION, type, ...fields };
}

export const outgoing = {
  startSession(study: string, user: string, session?: string): ClientMessage {
    return message("start_session", session ? { study, user, session } : { study, user });
  },
  selectEnv(index: number): ClientMessage {
    return message("select_env", { index });
  },
  startEpisode(): ClientMessage {
    return message("start_episode");
  },
  action(value: number): ClientMessage {
    return message("action", { value });
  },
  pause(): ClientMessage {
    return message("pause");
  },
  unpause(): ClientMessage {
    return message("unpause");
  },
  cancel(): ClientMessage {
    return message("cancel");
  },
  save(confirm: boolean): ClientMessage {
    return message("save", { confirm });
  },
  tag(fields: { episode?: string; scope: "episode" | "step"; name: string; value?: boolean | string; step?: number }): ClientMessage {
    return message("tag", fields);
  },
  endSession(): ClientMessage {
    return message("end_session");
  },
};
