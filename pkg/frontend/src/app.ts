// Browser wiring: study list/editor, live play on a canvas, replay with a
// clickable reward profile, tagging, and export download links. All state
// transitions come from the server; this file only renders and forwards.

import { Api, StudyDoc } from "./api.js";
import { outgoing, parseServerMessage } from "./protocol.js";
import { EpisodeSummary, ReplayView } from "./replay.js";
import { ClientSession } from "./session.js";

const api = new Api("");

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function drawFrame(canvas: HTMLCanvasElement, imageBase64: string): void {
  const img = new Image();
  img.onload = () => {
    canvas.width = img.width;
    canvas.height = img.height;
    canvas.getContext("2d")?.drawImage(img, 0, 0);
  };
  img.src = "data:image/png;base64," + imageBase64;
}

function drawRewardProfile(
  canvas: HTMLCanvasElement,
  rewards: number[],
  cursor: number,
  onJump: (step: number) => void,
): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const w = canvas.width;
  const h = canvas.height;
  ctx.clearRect(0, 0, w, h);
  ctx.fillStyle = "#1d1f24";
  ctx.fillRect(0, 0, w, h);
  const max = Math.max(...rewards, 1e-9);
  const min = Math.min(...rewards, 0);
  const span = max - min || 1;
  const x = (i: number) => (rewards.length > 1 ? (i / (rewards.length - 1)) * (w - 8) + 4 : w / 2);
  const y = (r: number) => h - 6 - ((r - min) / span) * (h - 12);
  ctx.strokeStyle = "#4fc36f";
  ctx.beginPath();
  rewards.forEach((r, i) => (i === 0 ? ctx.moveTo(x(i), y(r)) : ctx.lineTo(x(i), y(r))));
  ctx.stroke();
  ctx.strokeStyle = "#e0a13c";
  ctx.beginPath();
  ctx.moveTo(x(cursor), 0);
  ctx.lineTo(x(cursor), h);
  ctx.stroke();
  canvas.onclick = (event) => {
    const rect = canvas.getBoundingClientRect();
    const rel = (event.clientX - rect.left - 4) / (rect.width - 8);
    onJump(Math.round(rel * (rewards.length - 1)));
  };
}

// -- study list -------------------------------------------------------------

async function renderStudyList(root: HTMLElement): Promise<void> {
  root.replaceChildren();
  const studies = await api.listStudies();
  const list = el("div", { class: "studies" });
  for (const study of studies) {
    const row = el(
      "div",
      { class: "study-row" },
      el("b", {}, `${study.name} (${study.id})`),
      ` ${study.mode}, ${study.state} `,
    );
    if (study.state === "draft") {
      const activate = el("button", {}, "activate");
      activate.onclick = async () => {
        await api.activateStudy(study.id);
        renderStudyList(root);
      };
      row.append(activate);
    } else if (study.state === "active") {
      const play = el("button", {}, "play");
      play.onclick = () => renderPlay(root, study);
      const replay = el("button", {}, "episodes");
      replay.onclick = () => renderEpisodeList(root, study);
      row.append(play, replay);
    }
    list.append(row);
  }
  const form = el("div", { class: "study-editor" });
  const name = el("input", { placeholder: "study name", value: "grid study" });
  const instructions = el("textarea", { placeholder: "instructions for users" });
  const mode = el("select", {}, el("option", {}, "sync"), el("option", {}, "async"));
  const create = el("button", {}, "create study");
  create.onclick = async () => {
    await api.createStudy({
      name: name.value,
      instructions: instructions.value,
      mode: mode.value,
      environments: [{ env: "gridpickplace", config: {} }],
    });
    renderStudyList(root);
  };
  form.append(name, instructions, mode, create);
  root.append(el("h2", {}, "Studies"), list, form);
}

// -- live play ----------------------------------------------------------------

function renderPlay(root: HTMLElement, study: StudyDoc): void {
  root.replaceChildren(el("h2", {}, `Play: ${study.name}`));
  const canvas = el("canvas", { width: "320", height: "320", class: "play-canvas" });
  const status = el("div", { class: "status" }, "connecting...");
  const reward = el("div", { class: "reward" });
  const instructions = el("p", {}, study.instructions);

  const scheme = location.protocol === "https:" ? "wss:" : "ws:";
  const socket = new WebSocket(`${scheme}//${location.host}/ws`);
  const session = new ClientSession((msg) => socket.send(JSON.stringify(msg)), {
    onState: (state) => {
      status.textContent = `phase: ${state.phase}` + (state.last_outcome ? ` (last episode ${state.last_outcome})` : "");
      controls(state.phase);
    },
    onFrame: (frame) => {
      drawFrame(canvas, frame.image);
      reward.textContent = `step ${frame.step}, reward ${frame.reward}`;
    },
    onEpisodeEnd: (steps) => {
      if (confirm(`Episode finished after ${steps} steps. Save it?`)) {
        session.save(true);
      } else {
        session.save(false);
      }
    },
    onError: (code, message) => {
      status.textContent = `error ${code}: ${message}`;
    },
  });

  const buttons = el("div", { class: "controls" });
  const startButton = el("button", {}, "start episode");
  startButton.onclick = () => session.startEpisode();
  const pauseButton = el("button", {}, "pause");
  pauseButton.onclick = () => session.pause();
  const unpauseButton = el("button", {}, "unpause");
  unpauseButton.onclick = () => session.unpause();
  const cancelButton = el("button", {}, "cancel episode");
  cancelButton.onclick = () => session.cancel();
  const endButton = el("button", {}, "end session");
  endButton.onclick = () => {
    session.endSession();
    socket.close();
    renderStudyList(root);
  };
  buttons.append(startButton, pauseButton, unpauseButton, cancelButton, endButton);

  function controls(phase: string): void {
    startButton.disabled = phase !== "idle";
    pauseButton.disabled = phase !== "running";
    unpauseButton.disabled = phase !== "paused";
    cancelButton.disabled = phase !== "running" && phase !== "paused";
  }

  socket.onopen = () => session.open(study.id, localStorage.getItem("user") ?? "browser-user");
  socket.onmessage = (event) => {
    const msg = parseServerMessage(String(event.data));
    if (msg) session.handleServer(msg);
  };
  socket.onclose = () => {
    status.textContent = "disconnected (reload to reconnect)";
  };
  document.onkeydown = (event) => {
    if (session.keydown(event.code)) {
      event.preventDefault();
    }
  };

  root.append(instructions, status, canvas, reward, buttons);
}

// -- replay -----------------------------------------------------------------

async function renderEpisodeList(root: HTMLElement, study: StudyDoc): Promise<void> {
  root.replaceChildren(el("h2", {}, `Episodes: ${study.name}`));
  const episodes = await api.listEpisodes(study.id);
  for (const episode of episodes) {
    const row = el(
      "div",
      { class: "episode-row" },
      `${episode.episode_id} [${episode.outcome}] ${episode.num_steps} steps `,
    );
    const open = el("button", {}, "replay");
    open.onclick = () => renderReplay(root, study, episode);
    row.append(open);
    root.append(row);
  }
  const exportButton = el("button", {}, "download completed episodes");
  exportButton.onclick = async () => {
    const result = await api.exportStudy({ study: study.id, outcomes: ["completed"] });
    window.open(result.download, "_blank");
  };
  const back = el("button", {}, "back");
  back.onclick = () => renderStudyList(root);
  root.append(exportButton, back);
}

async function renderReplay(
  root: HTMLElement,
  study: StudyDoc,
  summary: EpisodeSummary,
): Promise<void> {
  root.replaceChildren(el("h2", {}, `Replay: ${summary.episode_id}`));
  const view = new ReplayView(summary);
  const canvas = el("canvas", { width: "320", height: "320", class: "play-canvas" });
  const profile = el("canvas", { width: "480", height: "120", class: "profile" });
  const detail = el("pre", { class: "step-detail" });
  const scrubber = el("input", {
    type: "range",
    min: "0",
    max: String(summary.num_steps - 1),
    value: "0",
  });

  async function showStep(): Promise<void> {
    scrubber.value = String(view.cursor);
    const step = await api.getStep(summary.episode_id, view.cursor);
    drawFrame(canvas, step.image);
    detail.textContent = JSON.stringify(
      {
        step: step.step,
        action: step.action,
        reward: step.reward,
        is_last: step.is_last,
        is_terminal: step.is_terminal,
        tags: step.tags,
      },
      null,
      2,
    );
    drawRewardProfile(profile, summary.rewards, view.cursor, (target) => {
      view.setCursor(target);
      void showStep();
    });
  }

  scrubber.oninput = () => {
    view.setCursor(Number(scrubber.value));
    void showStep();
  };
  document.onkeydown = (event) => {
    if (event.code === "ArrowRight") view.setCursor(view.cursor + 1);
    else if (event.code === "ArrowLeft") view.setCursor(view.cursor - 1);
    else return;
    void showStep();
  };

  const tagName = el("input", { placeholder: "tag name", value: "placed" });
  const tagButton = el("button", {}, "tag current step");
  tagButton.onclick = async () => {
    await api.tagEpisode(summary.episode_id, {
      scope: "step",
      name: tagName.value,
      value: true,
      step: view.cursor,
    });
    void showStep();
  };
  const episodeTagButton = el("button", {}, "tag episode as success");
  episodeTagButton.onclick = async () => {
    await api.tagEpisode(summary.episode_id, { scope: "episode", name: "success", value: true });
  };
  const back = el("button", {}, "back");
  back.onclick = () => renderEpisodeList(root, study);

  root.append(canvas, profile, scrubber, detail, tagName, tagButton, episodeTagButton, back);
  await showStep();
}

const root = document.getElementById("app");
if (root) {
  void renderStudyList(root);
}
