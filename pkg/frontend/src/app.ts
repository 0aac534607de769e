import { ApiClient } from "./api.js";
import { actionForKey, applyAction } from "./keyboard.js";
import { renderedClicks, ReviewSession } from "./session.js";
import { drawPatchThumbnail } from "./thumbnails.js";

const CELL = 96;
const GRID_COLUMNS = 8;

/**
 * Wire the review flow into the page: part selector, thumbnail grid with
 * click-to-toggle exceptions, click counter, progress bar, offline banner.
 */
export async function mountAnnotator(
  root: HTMLElement,
  baseUrl = "",
): Promise<void> {
  const client = new ApiClient(baseUrl);
  const { parts } = await client.parts();

  root.innerHTML = `
    <header>
      <select id="part"></select>
      <span id="progress"></span>
      <span id="clicks"></span>
      <span id="offline" hidden>offline — submissions queued</span>
    </header>
    <main>
      <div id="card"></div>
      <canvas id="grid"></canvas>
    </main>
    <footer>
      <button id="affirm">affirm all (a)</button>
      <button id="negate">negate all (n)</button>
      <button id="next">submit &amp; next (enter)</button>
    </footer>`;

  const select = root.querySelector<HTMLSelectElement>("#part")!;
  for (const part of parts) {
    const option = document.createElement("option");
    option.value = part;
    option.textContent = part;
    select.append(option);
  }

  let session: ReviewSession | null = null;
  const images = new Map<string, Promise<ImageBitmap>>();

  const loadImage = (url: string): Promise<ImageBitmap> => {
    let pending = images.get(url);
    if (!pending) {
      pending = fetch(url)
        .then((r) => r.blob())
        .then((blob) => createImageBitmap(blob));
      images.set(url, pending);
    }
    return pending;
  };

  const banner = root.querySelector<HTMLElement>("#offline")!;

  const startPart = async (part: string) => {
    session = new ReviewSession(client, part, "", {
      onOfflineChange: (offline) => {
        banner.hidden = !offline;
        if (!offline) void render();
      },
    });
    await session.start();
    await render();
  };

  const render = async () => {
    if (!session) return;
    const progress = root.querySelector<HTMLElement>("#progress")!;
    const clicks = root.querySelector<HTMLElement>("#clicks")!;
    const card = root.querySelector<HTMLElement>("#card")!;
    const canvas = root.querySelector<HTMLCanvasElement>("#grid")!;
    clicks.textContent = `clicks: ${session.totalClicks}`;

    const view = session.current;
    if (!view) {
      card.textContent = "all prototypes reviewed";
      progress.textContent = "";
      canvas.hidden = true;
      return;
    }
    canvas.hidden = false;
    progress.textContent = `${session.remaining()} to go`;
    card.textContent =
      `prototype ${view.prototype.id} — score ` +
      `${view.prototype.score.toFixed(3)} — this card costs ` +
      `${renderedClicks(view)} click(s)`;

    const members = view.prototype.members;
    const rows = Math.ceil(members.length / GRID_COLUMNS);
    canvas.width = GRID_COLUMNS * CELL;
    canvas.height = Math.max(1, rows) * CELL;
    const ctx = canvas.getContext("2d")!;
    ctx.clearRect(0, 0, canvas.width, canvas.height);
    await Promise.all(
      members.map(async (patch, i) => {
        const dx = (i % GRID_COLUMNS) * CELL;
        const dy = Math.floor(i / GRID_COLUMNS) * CELL;
        const bitmap = await loadImage(baseUrl + patch.thumbnail);
        drawPatchThumbnail(ctx, bitmap, patch, dx + 2, dy + 2, CELL - 4);
        ctx.strokeStyle = view.exceptions.has(i) ? "#d33" : "#3a3";
        ctx.lineWidth = view.exceptions.has(i) ? 3 : 1;
        ctx.strokeRect(dx + 1, dy + 1, CELL - 2, CELL - 2);
      }),
    );

    canvas.onclick = (event) => {
      const rect = canvas.getBoundingClientRect();
      const column = Math.floor((event.clientX - rect.left) / CELL);
      const row = Math.floor((event.clientY - rect.top) / CELL);
      const index = row * GRID_COLUMNS + column;
      if (index < members.length) {
        session!.togglePatch(index);
        void render();
      }
    };
  };

  const dispatch = async (action: ReturnType<typeof actionForKey>) => {
    if (!session || !action) return;
    await applyAction(session, action);
    await render();
  };

  root.querySelector("#affirm")!.addEventListener("click", () =>
    void dispatch({ kind: "affirm-all" }),
  );
  root.querySelector("#negate")!.addEventListener("click", () =>
    void dispatch({ kind: "negate-all" }),
  );
  root.querySelector("#next")!.addEventListener("click", () =>
    void dispatch({ kind: "next" }),
  );
  document.addEventListener("keydown", (event) =>
    void dispatch(actionForKey(event.key)),
  );
  select.addEventListener("change", () => void startPart(select.value));

  window.addEventListener("online", () => void session?.flushQueue());

  if (parts.length > 0) await startPart(parts[0]!);
}
