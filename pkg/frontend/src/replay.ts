// Replay model: a step cursor over one stored episode plus its reward
// time-series. Pure state; fetching and rendering live elsewhere. Every
// displayed value comes verbatim from the server payloads.

export interface EpisodeSummary {
  episode_id: string;
  outcome: string;
  user_id: string;
  num_steps: number;
  rewards: number[];
  tags: Record<string, boolean | string>;
  step_tags: Record<string, Record<string, boolean | string>>;
}

export interface StepPayload {
  episode_id: string;
  step: number;
  num_steps: number;
  is_first: boolean;
  is_last: boolean;
  is_terminal: boolean;
  observation: unknown;
  action: unknown;
  reward: number;
  discount: number;
  image: string; // base64 PNG
  tags: Record<string, boolean | string>;
}

export class ReplayView {
  readonly episodeId: string;
  readonly numSteps: number;
  readonly rewards: number[];
  cursor = 0;

  constructor(summary: EpisodeSummary) {
    this.episodeId = summary.episode_id;
    this.numSteps = summary.num_steps;
    this.rewards = summary.rewards;
  }

  setCursor(step: number): number {
    this.cursor = Math.min(Math.max(Math.trunc(step), 0), this.numSteps - 1);
    return this.cursor;
  }

  // Clicking the reward profile at x jumps the cursor to that step.
  jumpToProfile(x: number): number {
    return this.setCursor(Math.round(x));
  }

  // The most prominent reward event; ties resolve to the earliest step.
  spikeStep(): number {
    let best = 0;
    for (let i = 1; i < this.rewards.length; i++) {
      if (this.rewards[i] > this.rewards[best]) {
        best = i;
      }
    }
    return best;
  }
}
