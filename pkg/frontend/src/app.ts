/**
 * Single-page client for the clutter analysis service.
 *
 * One ViewState drives the whole UI; every transition re-renders. Overlay
 * pixels are painted into a canvas from client-decoded run-length masks,
 * while object tags (name + contribution) are DOM nodes so they stay crisp
 * and clickable. Flip and clean are serialized through one promise chain,
 * so at most one mutation is in flight per session; a failed call surfaces
 * as a banner and leaves the view untouched.
 *
 * Gestures: press-and-hold (300 ms) hides the overlays until release,
 * click opens the suggestion popup, double-click flips the classification,
 * the clean button renders a removal preview at the selected fidelity.
 */

import {
  ApiFailure,
  cleanSession,
  createSession,
  fetchPng,
  flipObject,
  getSuggestions,
  type FetchLike,
  type Fidelity,
  type ObjectDoc,
  type SessionDoc,
  type SuggestionsDoc,
} from "./api.js";
import { decodeRle, maskBounds, type Bounds } from "./rle.js";

export const HOLD_MS = 300;
/** Single clicks wait this long so a double-click can cancel them. */
export const CLICK_DELAY_MS = 250;

// low-opacity overlay for kept objects, high-visibility for clutter (RGBA)
const NORMAL_FILL = [70, 130, 255, 60] as const;
const CLUTTER_FILL = [255, 45, 45, 170] as const;

interface ObjectView {
  doc: ObjectDoc;
  mask: Uint8Array;
  bounds: Bounds | null;
}

interface PreviewEntry {
  bytes: Uint8Array;
  url: string | null;
}

export interface ViewState {
  session: SessionDoc | null;
  objects: ObjectView[];
  masksVisible: boolean;
  selected: number | null;
  suggestions: SuggestionsDoc | null;
  activePreview: Fidelity | null;
  previews: Map<Fidelity, PreviewEntry>;
  busy: boolean;
  error: string | null;
}

function initialState(): ViewState {
  return {
    session: null,
    objects: [],
    masksVisible: true,
    selected: null,
    suggestions: null,
    activePreview: null,
    previews: new Map(),
    busy: false,
    error: null,
  };
}

/** jsdom has no object URLs; rendering falls back to state-only updates. */
function toObjectUrl(bytes: Uint8Array, type: string): string | null {
  if (typeof URL === "undefined" || typeof URL.createObjectURL !== "function") {
    return null;
  }
  return URL.createObjectURL(new Blob([bytes.buffer as ArrayBuffer], { type }));
}

function describeFailure(err: unknown): string {
  if (err instanceof ApiFailure) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

export class App {
  readonly state: ViewState = initialState();

  private readonly fetchFn: FetchLike;
  private readonly els: {
    file: HTMLInputElement;
    fidelity: HTMLSelectElement;
    clean: HTMLButtonElement;
    toggle: HTMLButtonElement;
    progress: HTMLElement;
    banner: HTMLElement;
    stage: HTMLElement;
    base: HTMLImageElement;
    preview: HTMLImageElement;
    overlay: HTMLCanvasElement;
    tags: HTMLElement;
    popup: HTMLElement;
  };

  private tail: Promise<void> = Promise.resolve();
  private holdTimer: number | null = null;
  private holdActive = false;
  private suppressNextClick = false;
  private clickTimer: number | null = null;
  private overlayCtx: CanvasRenderingContext2D | null | undefined;

  constructor(root: HTMLElement, fetchFn: FetchLike) {
    this.fetchFn = fetchFn;
    root.innerHTML = `
      <header class="bar">
        <label class="upload">upload
          <input id="file" type="file" accept="image/png">
        </label>
        <label>fidelity
          <select id="fidelity">
            <option value="capture">capture</option>
            <option value="high">high</option>
          </select>
        </label>
        <button id="clean">clean</button>
        <button id="toggle-preview">show preview</button>
        <span id="progress" hidden>working...</span>
      </header>
      <div id="banner" class="banner" hidden></div>
      <div id="stage" class="stage">
        <img id="base" alt="scene">
        <img id="preview" alt="cleaned preview" hidden>
        <canvas id="overlay"></canvas>
        <div id="tags"></div>
        <div id="popup" class="popup" hidden></div>
      </div>`;
    const pick = <T extends Element>(sel: string) => root.querySelector(sel) as T;
    this.els = {
      file: pick("#file"),
      fidelity: pick("#fidelity"),
      clean: pick("#clean"),
      toggle: pick("#toggle-preview"),
      progress: pick("#progress"),
      banner: pick("#banner"),
      stage: pick("#stage"),
      base: pick("#base"),
      preview: pick("#preview"),
      overlay: pick("#overlay"),
      tags: pick("#tags"),
      popup: pick("#popup"),
    };
    this.bindEvents();
    this.render();
  }

  /** Resolves when every queued mutation has settled. */
  whenIdle(): Promise<void> {
    return this.tail;
  }

  // -- session loading ------------------------------------------------------

  async loadImage(pngBytes: Uint8Array): Promise<void> {
    this.state.error = null;
    this.state.busy = true;
    this.render();
    try {
      const doc = await createSession(this.fetchFn, pngBytes);
      this.state.session = doc;
      this.state.objects = doc.objects.map((o) => {
        const mask = decodeRle(o.mask_rle);
        return { doc: o, mask, bounds: maskBounds(mask, doc.width, doc.height) };
      });
      this.state.previews = new Map();
      this.state.activePreview = null;
      this.state.selected = null;
      this.state.suggestions = null;
      this.state.masksVisible = true;
      const url = toObjectUrl(pngBytes, "image/png");
      if (url !== null) this.els.base.src = url;
    } catch (err) {
      this.state.error = describeFailure(err);
    } finally {
      this.state.busy = false;
      this.render();
    }
  }

  // -- gestures --------------------------------------------------------------

  pressStart(): void {
    this.cancelHold();
    this.holdTimer = setTimeout(() => {
      this.holdActive = true;
      this.state.masksVisible = false;
      this.render();
    }, HOLD_MS);
  }

  pressEnd(): void {
    this.cancelHold();
    if (this.holdActive) {
      this.holdActive = false;
      this.state.masksVisible = true;
      // the browser fires a click for the pointer sequence we just consumed
      this.suppressNextClick = true;
      this.render();
    }
  }

  async clickObject(objectId: number | null): Promise<void> {
    if (objectId === null) {
      this.state.selected = null;
      this.state.suggestions = null;
      this.render();
      return;
    }
    if (this.state.session === null) return;
    this.state.error = null;
    try {
      const doc = await getSuggestions(this.fetchFn, this.state.session.id, objectId);
      this.state.selected = objectId;
      this.state.suggestions = doc;
    } catch (err) {
      this.state.error = describeFailure(err);
    }
    this.render();
  }

  doubleClickObject(objectId: number): Promise<void> {
    return this.enqueue(async () => {
      if (this.state.session === null) return;
      this.state.error = null;
      this.state.busy = true;
      this.render();
      try {
        const doc = await flipObject(this.fetchFn, this.state.session.id, objectId);
        const view = this.state.objects.find((o) => o.doc.id === objectId);
        if (view) view.doc = doc;
        // the flip invalidated any rendered previews, server- and client-side
        this.dropPreviews();
      } catch (err) {
        this.state.error = describeFailure(err);
      } finally {
        this.state.busy = false;
        this.render();
      }
    });
  }

  clean(fidelity: Fidelity): Promise<void> {
    return this.enqueue(async () => {
      if (this.state.session === null) return;
      this.state.error = null;
      if (this.state.previews.has(fidelity)) {
        this.state.activePreview = fidelity;
        this.render();
        return;
      }
      this.state.busy = true;
      this.render();
      try {
        const { preview_url } = await cleanSession(this.fetchFn, this.state.session.id, fidelity);
        const bytes = await fetchPng(this.fetchFn, preview_url);
        this.state.previews.set(fidelity, { bytes, url: toObjectUrl(bytes, "image/png") });
        this.state.activePreview = fidelity;
      } catch (err) {
        this.state.error = describeFailure(err);
      } finally {
        this.state.busy = false;
        this.render();
      }
    });
  }

  togglePreview(): void {
    if (this.state.activePreview !== null) {
      this.state.activePreview = null;
    } else {
      const fidelity = this.els.fidelity.value as Fidelity;
      if (this.state.previews.has(fidelity)) this.state.activePreview = fidelity;
    }
    this.render();
  }

  // -- wiring ----------------------------------------------------------------

  private bindEvents(): void {
    this.els.file.addEventListener("change", () => {
      const file = this.els.file.files?.[0];
      if (!file) return;
      void file.arrayBuffer().then((buf) => this.loadImage(new Uint8Array(buf)));
    });

    const stage = this.els.stage;
    stage.addEventListener("pointerdown", () => this.pressStart());
    for (const type of ["pointerup", "pointercancel", "pointerleave"]) {
      stage.addEventListener(type, () => this.pressEnd());
    }

    stage.addEventListener("click", (ev) => {
      if (this.suppressNextClick) {
        this.suppressNextClick = false;
        return;
      }
      const objectId = this.eventObject(ev);
      this.cancelClick();
      this.clickTimer = setTimeout(() => {
        this.clickTimer = null;
        void this.clickObject(objectId);
      }, CLICK_DELAY_MS);
    });

    stage.addEventListener("dblclick", (ev) => {
      this.cancelClick();
      const objectId = this.eventObject(ev);
      if (objectId !== null) void this.doubleClickObject(objectId);
    });

    this.els.clean.addEventListener("click", () => {
      void this.clean(this.els.fidelity.value as Fidelity);
    });
    this.els.toggle.addEventListener("click", () => this.togglePreview());
  }

  /** Object id under a gesture: its tag node, else a mask pixel hit. */
  private eventObject(ev: Event): number | null {
    const target = ev.target as Element | null;
    const tag = target?.closest?.("[data-object-id]");
    if (tag) return Number((tag as HTMLElement).dataset.objectId);
    if (this.state.session === null) return null;
    const mouse = ev as MouseEvent;
    const rect = this.els.stage.getBoundingClientRect();
    if (rect.width <= 0 || rect.height <= 0) return null;
    const x = Math.floor(((mouse.clientX - rect.left) / rect.width) * this.state.session.width);
    const y = Math.floor(((mouse.clientY - rect.top) / rect.height) * this.state.session.height);
    if (x < 0 || y < 0 || x >= this.state.session.width || y >= this.state.session.height) {
      return null;
    }
    // later objects render on top, so search them first
    for (let i = this.state.objects.length - 1; i >= 0; i--) {
      const view = this.state.objects[i];
      if (view.mask[y * this.state.session.width + x]) return view.doc.id;
    }
    return null;
  }

  private enqueue(task: () => Promise<void>): Promise<void> {
    const run = this.tail.then(task, task);
    this.tail = run.then(
      () => undefined,
      () => undefined,
    );
    return run;
  }

  private cancelHold(): void {
    if (this.holdTimer !== null) {
      clearTimeout(this.holdTimer);
      this.holdTimer = null;
    }
  }

  private cancelClick(): void {
    if (this.clickTimer !== null) {
      clearTimeout(this.clickTimer);
      this.clickTimer = null;
    }
  }

  private dropPreviews(): void {
    for (const entry of this.state.previews.values()) {
      if (entry.url !== null && typeof URL.revokeObjectURL === "function") {
        URL.revokeObjectURL(entry.url);
      }
    }
    this.state.previews = new Map();
    this.state.activePreview = null;
  }

  // -- rendering ---------------------------------------------------------------

  render(): void {
    const s = this.state;
    this.els.banner.hidden = s.error === null;
    this.els.banner.textContent = s.error ?? "";
    this.els.progress.hidden = !s.busy;

    const preview = s.activePreview !== null ? s.previews.get(s.activePreview) : undefined;
    const showPreview = preview !== undefined;
    this.els.preview.hidden = !showPreview;
    this.els.base.hidden = showPreview;
    if (preview?.url && this.els.preview.src !== preview.url) {
      this.els.preview.src = preview.url;
    }
    this.els.toggle.textContent = showPreview ? "show original" : "show preview";

    const overlaysVisible = !showPreview && s.masksVisible && s.session !== null;
    this.els.overlay.hidden = !overlaysVisible;
    this.els.tags.hidden = !overlaysVisible;
    this.paintOverlay(overlaysVisible);
    this.renderTags(overlaysVisible);
    this.renderPopup();
  }

  private context2d(): CanvasRenderingContext2D | null {
    if (this.overlayCtx === undefined) {
      try {
        this.overlayCtx = this.els.overlay.getContext("2d");
      } catch {
        this.overlayCtx = null; // jsdom has no canvas backend
      }
    }
    return this.overlayCtx;
  }

  private paintOverlay(visible: boolean): void {
    const session = this.state.session;
    const ctx = this.context2d();
    if (!ctx || session === null) return;
    this.els.overlay.width = session.width;
    this.els.overlay.height = session.height;
    if (!visible) {
      ctx.clearRect(0, 0, session.width, session.height);
      return;
    }
    const buf = ctx.createImageData(session.width, session.height);
    const ordered = [...this.state.objects].sort(
      (a, b) => Number(a.doc.is_clutter) - Number(b.doc.is_clutter));
    for (const view of ordered) {
      const fill = view.doc.is_clutter ? CLUTTER_FILL : NORMAL_FILL;
      for (let i = 0; i < view.mask.length; i++) {
        if (!view.mask[i]) continue;
        buf.data[i * 4] = fill[0];
        buf.data[i * 4 + 1] = fill[1];
        buf.data[i * 4 + 2] = fill[2];
        buf.data[i * 4 + 3] = fill[3];
      }
    }
    ctx.putImageData(buf, 0, 0);
  }

  private renderTags(visible: boolean): void {
    const session = this.state.session;
    this.els.tags.textContent = "";
    if (!visible || session === null) return;
    for (const view of this.state.objects) {
      const tag = document.createElement("div");
      tag.className = view.doc.is_clutter ? "tag clutter" : "tag normal";
      tag.dataset.objectId = String(view.doc.id);
      tag.textContent = `${view.doc.label} ${view.doc.q.toFixed(2)}`;
      if (view.bounds) {
        tag.style.left = `${(view.bounds.x0 / session.width) * 100}%`;
        tag.style.top = `${(view.bounds.y0 / session.height) * 100}%`;
      }
      this.els.tags.appendChild(tag);
    }
  }

  private renderPopup(): void {
    const { selected, suggestions } = this.state;
    const open = selected !== null && suggestions !== null;
    this.els.popup.hidden = !open;
    this.els.popup.textContent = "";
    if (!open) return;
    const heading = document.createElement("div");
    heading.className = "popup-kind";
    heading.textContent = suggestions.kind;
    const list = document.createElement("ul");
    for (const text of suggestions.suggestions) {
      const item = document.createElement("li");
      item.textContent = text;
      list.appendChild(item);
    }
    this.els.popup.append(heading, list);
  }
}

export function mountApp(root: HTMLElement, fetchFn: FetchLike): App {
  return new App(root, fetchFn);
}
