// DOM wiring. All state transitions are driven by trace events from the
// stream; this file only renders UIState and forwards user intent to the API.

import { ApiError, ServiceClient } from "./api.js";
import { layoutGraph } from "./graphView.js";
import { scaleRegions } from "./overlay.js";
import { streamTraceEvents } from "./sse.js";
import {
  EventSequencer,
  UIState,
  answerBadge,
  canAbort,
  canFollowUp,
  initialState,
} from "./state.js";

interface Elements {
  image: HTMLInputElement;
  prompt: HTMLInputElement;
  mode: HTMLSelectElement;
  ask: HTMLButtonElement;
  abort: HTMLButtonElement;
  banner: HTMLElement;
  preview: HTMLImageElement;
  overlays: HTMLElement;
  graphs: HTMLElement;
  knowledge: HTMLElement;
  answer: HTMLElement;
  turns: HTMLElement;
}

interface Turn {
  prompt: string;
  answerText: string;
  traceUrl: string;
}

export class App {
  private client: ServiceClient;
  private sessionId: string | null = null;
  private state: UIState = initialState();
  private turns: Turn[] = [];
  private currentImage: Blob | null = null;
  private streamController: AbortController | null = null;

  constructor(
    private el: Elements,
    baseUrl = "",
  ) {
    this.client = new ServiceClient(baseUrl);
    el.ask.addEventListener("click", () => void this.ask());
    el.abort.addEventListener("click", () => void this.abort());
    this.render();
  }

  private async ensureSession(): Promise<string> {
    if (this.sessionId === null) this.sessionId = await this.client.createSession();
    return this.sessionId;
  }

  async ask(): Promise<void> {
    // a follow-up reuses the session and the already-uploaded image
    const file = this.el.image.files?.[0] ?? (canFollowUp(this.state) ? this.currentImage : null);
    const prompt = this.el.prompt.value.trim();
    if (!file || !prompt) {
      this.showBanner("choose an image and type a question");
      return;
    }
    this.currentImage = file;
    try {
      const sessionId = await this.ensureSession();
      const queryId = await this.client.submitQuery(sessionId, file, prompt, this.el.mode.value);
      this.follow(queryId);
    } catch (error) {
      this.showBanner(error instanceof ApiError ? error.message : String(error));
    }
  }

  private follow(queryId: string): void {
    this.streamController?.abort();
    this.streamController = new AbortController();
    const sequencer = new EventSequencer(initialState(), (state) => {
      this.state = state;
      this.render();
      if (state.status === "done" && state.answer) {
        this.turns.push({
          prompt: state.prompt,
          answerText: state.answer.text,
          traceUrl: this.client.traceUrl(queryId),
        });
        this.renderTurns();
      }
    });
    void streamTraceEvents(
      this.client.eventsUrl(queryId),
      (event) => sequencer.push(event),
      { signal: this.streamController.signal },
    ).catch((error) => this.showBanner(String(error)));
  }

  async abort(): Promise<void> {
    if (!canAbort(this.state) || this.state.queryId === null) return;
    try {
      await this.client.abortQuery(this.state.queryId);
    } catch (error) {
      this.showBanner(error instanceof ApiError ? error.message : String(error));
    }
  }

  private showBanner(message: string): void {
    this.el.banner.textContent = message;
    this.el.banner.hidden = message === "";
  }

  private render(): void {
    const state = this.state;
    this.el.abort.disabled = !canAbort(state);
    this.el.ask.disabled = state.status === "running";

    // region overlays, scaled to the displayed image size
    this.el.overlays.replaceChildren();
    if (state.imageSize && this.el.preview.width > 0) {
      const boxes = scaleRegions(state.regions, state.imageSize, {
        width: this.el.preview.width,
        height: this.el.preview.height,
      });
      for (const box of boxes) {
        const div = document.createElement("div");
        div.className = "overlay";
        div.style.left = `${box.left}px`;
        div.style.top = `${box.top}px`;
        div.style.width = `${box.width}px`;
        div.style.height = `${box.height}px`;
        div.title = `${box.regionIndex}: ${box.label}`;
        this.el.overlays.appendChild(div);
      }
    }

    // per-region graphs with node states and evidence on hover
    this.el.graphs.replaceChildren();
    for (const [region, graph] of Object.entries(state.graphs)) {
      const layout = layoutGraph(graph);
      const section = document.createElement("section");
      const heading = document.createElement("h3");
      heading.textContent = `Object ${region}: ${layout.nodeCount} nodes, ${layout.edgeCount} edges`;
      section.appendChild(heading);
      const list = document.createElement("ul");
      for (const node of layout.nodes) {
        const item = document.createElement("li");
        item.className = `node node-${node.state}`;
        item.textContent = `${node.nodeId} [${node.state}] ${node.label}`;
        if (node.responseText) item.title = node.responseText;
        const evidence = state.evidence[node.nodeId];
        if (evidence) {
          const picks = document.createElement("span");
          picks.className = "evidence";
          picks.textContent = ` ${evidence.selected.length}/${evidence.candidates.length} pages`;
          item.appendChild(picks);
        }
        list.appendChild(item);
      }
      section.appendChild(list);
      this.el.graphs.appendChild(section);
    }

    // knowledge panel
    this.el.knowledge.replaceChildren();
    for (const [region, knowledge] of Object.entries(state.knowledge)) {
      const p = document.createElement("p");
      p.textContent = `Object ${region} (level ${knowledge.level}): ${knowledge.text}`;
      this.el.knowledge.appendChild(p);
    }

    // answer with badge and clickable sources
    this.el.answer.replaceChildren();
    const badge = answerBadge(state);
    if (badge) {
      const span = document.createElement("span");
      span.className = "badge";
      span.textContent = badge;
      this.el.answer.appendChild(span);
    }
    if (state.answer) {
      const p = document.createElement("p");
      p.textContent = state.answer.text;
      this.el.answer.appendChild(p);
      const sources = document.createElement("ul");
      for (const [url] of state.answer.citations) {
        const item = document.createElement("li");
        const link = document.createElement("a");
        link.href = url;
        link.textContent = url;
        link.target = "_blank";
        item.appendChild(link);
        sources.appendChild(item);
      }
      this.el.answer.appendChild(sources);
    }
    if (state.errorMessage) {
      this.showBanner(state.errorMessage);
    }
  }

  private renderTurns(): void {
    this.el.turns.replaceChildren();
    for (const turn of this.turns) {
      const item = document.createElement("li");
      const link = document.createElement("a");
      link.href = turn.traceUrl;
      link.textContent = "trace";
      item.textContent = `${turn.prompt} -> ${turn.answerText} `;
      item.appendChild(link);
      this.el.turns.appendChild(item);
    }
  }
}

export function mount(root: Document = document): App {
  const byId = <T extends HTMLElement>(id: string) => root.getElementById(id) as T;
  return new App({
    image: byId<HTMLInputElement>("image"),
    prompt: byId<HTMLInputElement>("prompt"),
    mode: byId<HTMLSelectElement>("mode"),
    ask: byId<HTMLButtonElement>("ask"),
    abort: byId<HTMLButtonElement>("abort"),
    banner: byId("banner"),
    preview: byId<HTMLImageElement>("preview"),
    overlays: byId("overlays"),
    graphs: byId("graphs"),
    knowledge: byId("knowledge"),
    answer: byId("answer"),
    turns: byId("turns"),
  });
}
