// Thin HTTP client over the server's replay/tagging/export endpoints.

import { EpisodeSummary, StepPayload } from "./replay.js";

export interface StudyDoc {
  id: string;
  name: string;
  instructions: string;
  environments: Array<Record<string, unknown>>;
  mode: "sync" | "async";
  frame_rate_hz: number;
  pause_timeout_s: number;
  state: "draft" | "active" | "archived";
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class Api {
  private base: string;
  private fetchFn: FetchLike;

  constructor(base: string, fetchFn?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    const doc = (await response.json()) as T & { code?: string; message?: string };
    if (!response.ok) {
      throw new Error(`${doc.code ?? response.status}: ${doc.message ?? "request failed"}`);
    }
    return doc;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async listStudies(): Promise<StudyDoc[]> {
    const doc = await this.request<{ studies: StudyDoc[] }>("/studies");
    return doc.studies;
  }

  async createStudy(body: Record<string, unknown>): Promise<StudyDoc> {
    const doc = await this.post<{ study: StudyDoc }>("/studies", body);
    return doc.study;
  }

  async activateStudy(id: string): Promise<StudyDoc> {
    const doc = await this.post<{ study: StudyDoc }>(`/studies/${id}/activate`, {});
    return doc.study;
  }

  async listEpisodes(studyId: string): Promise<EpisodeSummary[]> {
    const doc = await this.request<{ episodes: EpisodeSummary[] }>(
      `/studies/${studyId}/episodes`,
    );
    return doc.episodes;
  }

  getStep(episodeId: string, step: number): Promise<StepPayload> {
    return this.request<StepPayload>(`/episodes/${episodeId}/steps/${step}`);
  }

  tagEpisode(
    episodeId: string,
    fields: { scope: "episode" | "step"; name: string; value?: boolean | string; step?: number },
  ): Promise<{ ok: boolean }> {
    return this.post(`/episodes/${episodeId}/tags`, fields);
  }

  exportStudy(body: {
    study: string;
    name?: string;
    outcomes?: string[];
    episode_ids?: string[];
    strip_images?: boolean;
    truncate_on_tag?: string;
  }): Promise<{ download: string; episodes: number; steps: number; bytes: number }> {
    return this.post("/export", body);
  }
}
