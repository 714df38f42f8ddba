/**
 * DOM rendering for the review screen. No framework: the screen is one
 * queue, one note pane, and one export bar, and every interaction is local.
 *
 * Layout contract (tests rely on these hooks):
 *   .item-card[data-id]          one per evidence item, .selected on the open one
 *   .presence / .relevance       the two fieldsets; relevance starts disabled
 *   .hallucination-tag           revealed when presence is answered "no"
 *   .source-badge / .confidence-badge   hidden while blinded
 *   details.abstained-group      collapsed container for withheld items
 *   .no-highlight-hint           shown when the item has no highlight in its note
 *   .note-text span.hl           highlighted sentences, tagged data-sentence-index
 *   .submit-annotations          disabled until every item is reviewed
 */

import { highlightIndexesFor, noteSegments } from "./highlights";
import { ReviewSession } from "./session";
import type {
  AnnotationRow,
  EvidenceBundle,
  EvidenceItem,
  NoteDetail,
  RelevanceValue,
} from "./types";
import { RELEVANCE_CAPTIONS, RELEVANCE_SCALE } from "./types";

export interface ReviewOptions {
  bundle: EvidenceBundle;
  notes: Map<string, NoteDetail>;
  session?: ReviewSession;
  onSubmit?: (rows: AnnotationRow[]) => void | Promise<void>;
}

export interface ReviewHandle {
  root: HTMLElement;
  session: ReviewSession;
  selectedId(): string | null;
  selectItem(id: string): void;
  setBlinded(on: boolean): void;
}

const el = <K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] => {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
};

const confidenceCaption = (item: EvidenceItem): string | null => {
  if (item.confidence !== null) return `conf ${item.confidence.toFixed(2)}`;
  if (item.score !== null) return `sim ${item.score.toFixed(2)}`;
  return null;
};

export function renderReview(container: HTMLElement, opts: ReviewOptions): ReviewHandle {
  const session = opts.session ?? new ReviewSession(opts.bundle.items);
  let selected: string | null = null;

  const root = el("div", "review");
  const cards = new Map<string, HTMLLIElement>();

  // --- header -------------------------------------------------------------
  const header = el("header", "review-head");
  header.append(
    el("h2", "review-title", `${opts.bundle.condition} — patient ${opts.bundle.patient_id}`),
    el("span", "run-id", `run ${opts.bundle.run_id}`),
  );
  const blindLabel = el("label", "blind-toggle", " Blind sources");
  const blindBox = el("input", "blind-toggle-box");
  blindBox.type = "checkbox";
  blindBox.addEventListener("change", () => setBlinded(blindBox.checked));
  blindLabel.prepend(blindBox);
  header.append(blindLabel);
  root.append(header);

  // --- note pane ----------------------------------------------------------
  const notePane = el("main", "note-pane");
  const noteMeta = el("header", "note-meta");
  const noHighlightHint = el(
    "p",
    "no-highlight-hint",
    "No matching sentence found — read the full note.",
  );
  noHighlightHint.hidden = true;
  const noteText = el("div", "note-text");
  notePane.append(noteMeta, noHighlightHint, noteText);

  const showItem = (id: string): void => {
    const item =
      session.active.find((i) => i.id === id) ?? session.abstained.find((i) => i.id === id);
    if (!item) throw new Error(`unknown evidence item ${id}`);
    selected = id;
    for (const [cardId, card] of cards) card.classList.toggle("selected", cardId === id);

    const note = opts.notes.get(item.source_note_id);
    noteText.replaceChildren();
    if (!note) {
      noteMeta.textContent = `note ${item.source_note_id} (not loaded)`;
      noHighlightHint.hidden = true;
      return;
    }
    const stamp = note.timestamp ? ` · ${note.timestamp}` : "";
    noteMeta.textContent = `${note.note_id} · ${note.category}${stamp}`;

    const indexes = highlightIndexesFor(item, note.note_id);
    noHighlightHint.hidden = indexes.length > 0;
    for (const segment of noteSegments(note, indexes)) {
      const span = el("span", segment.highlighted ? "hl" : undefined, segment.text);
      if (segment.highlighted && segment.sentenceIndex !== null) {
        span.dataset.sentenceIndex = String(segment.sentenceIndex);
      }
      noteText.append(span);
    }
  };

  // --- item cards ----------------------------------------------------------
  const badgeRow = (item: EvidenceItem): HTMLElement => {
    const head = el("header", "item-head");
    head.append(el("span", "kind-badge", item.kind));
    const source = el(
      "span",
      "source-badge",
      item.source === "generated" ? "generated" : "extracted",
    );
    head.append(source);
    const caption = confidenceCaption(item);
    if (caption) head.append(el("span", "confidence-badge", caption));
    return head;
  };

  const buildCard = (item: EvidenceItem, interactive: boolean): HTMLLIElement => {
    const card = el("li", "item-card");
    card.dataset.id = item.id;
    card.append(badgeRow(item), el("p", "item-text", item.text));
    if (item.duplicate_sources.length > 0) {
      const noteIds = item.duplicate_sources.map(([noteId]) => noteId);
      card.append(el("p", "duplicates", `also found in ${noteIds.join(", ")}`));
    }
    card.addEventListener("click", () => showItem(item.id));
    if (!interactive) {
      card.classList.add("abstained");
      return card;
    }

    const presence = el("fieldset", "presence");
    presence.append(el("legend", undefined, "Supported by the note?"));
    const hallucinationTag = el("span", "hallucination-tag", "recorded as hallucination");
    hallucinationTag.hidden = true;

    const relevance = el("fieldset", "relevance");
    relevance.disabled = true;
    relevance.append(el("legend", undefined, `How useful for ${item.condition}?`));
    const relevanceInputs: HTMLInputElement[] = [];
    for (const value of RELEVANCE_SCALE) {
      const label = el("label", "relevance-choice", ` ${RELEVANCE_CAPTIONS[value]}`);
      const input = el("input");
      input.type = "radio";
      input.name = `relevance-${item.id}`;
      input.value = value;
      input.addEventListener("change", () => {
        session.setRelevance(item.id, value as RelevanceValue);
        updateProgress();
      });
      relevanceInputs.push(input);
      label.prepend(input);
      relevance.append(label);
    }

    for (const answer of ["yes", "no"] as const) {
      const label = el("label", "presence-choice", ` ${answer === "yes" ? "Yes" : "No"}`);
      const input = el("input");
      input.type = "radio";
      input.name = `presence-${item.id}`;
      input.value = answer;
      input.addEventListener("change", () => {
        session.setPresence(item.id, answer);
        relevance.disabled = answer !== "yes";
        hallucinationTag.hidden = answer !== "no";
        if (answer === "no") {
          for (const radio of relevanceInputs) radio.checked = false;
        }
        updateProgress();
      });
      label.prepend(input);
      presence.append(label);
    }

    card.append(presence, hallucinationTag, relevance);
    return card;
  };

  const queue = el("aside", "queue");
  if (session.active.length === 0) {
    queue.append(el("p", "empty-queue", "No active evidence for this run."));
  } else {
    const list = el("ol", "active-items");
    for (const item of session.active) {
      const card = buildCard(item, true);
      cards.set(item.id, card);
      list.append(card);
    }
    queue.append(list);
  }
  if (session.abstained.length > 0) {
    const group = el("details", "abstained-group");
    group.append(
      el(
        "summary",
        undefined,
        `${session.abstained.length} withheld below the confidence threshold`,
      ),
    );
    const list = el("ol", "abstained-items");
    for (const item of session.abstained) {
      const card = buildCard(item, false);
      cards.set(item.id, card);
      list.append(card);
    }
    group.append(list);
    queue.append(group);
  }

  const body = el("div", "review-body");
  body.append(queue, notePane);
  root.append(body);

  // --- export bar ----------------------------------------------------------
  const exportBar = el("footer", "export-bar");
  const annotatorInput = el("input", "annotator-id");
  annotatorInput.type = "text";
  annotatorInput.placeholder = "annotator id";
  const progress = el("span", "progress");
  const submit = el("button", "submit-annotations", "Submit annotations");
  const status = el("span", "export-status");
  exportBar.append(annotatorInput, progress, submit, status);
  root.append(exportBar);

  const updateProgress = (): void => {
    progress.textContent = `${session.completedCount()}/${session.size} reviewed`;
    submit.disabled =
      session.size === 0 ||
      session.completedCount() < session.size ||
      annotatorInput.value.trim() === "";
  };
  annotatorInput.addEventListener("input", updateProgress);
  submit.addEventListener("click", async () => {
    status.classList.remove("error");
    try {
      const rows = session.exportRows(annotatorInput.value);
      await opts.onSubmit?.(rows);
      status.textContent = `submitted ${rows.length} labels`;
    } catch (err) {
      status.classList.add("error");
      status.textContent = err instanceof Error ? err.message : String(err);
    }
  });

  const setBlinded = (on: boolean): void => {
    blindBox.checked = on;
    root.classList.toggle("blinded", on);
    for (const badge of root.querySelectorAll<HTMLElement>(".source-badge, .confidence-badge")) {
      badge.hidden = on;
    }
  };

  updateProgress();
  const first = session.active[0] ?? session.abstained[0];
  if (first) showItem(first.id);
  else noteMeta.textContent = "No evidence to review.";

  container.replaceChildren(root);
  return {
    root,
    session,
    selectedId: () => selected,
    selectItem: showItem,
    setBlinded,
  };
}
