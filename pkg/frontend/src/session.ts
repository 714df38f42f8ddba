/**
 * Review session state: which items are up for review, in what order, and
 * what the annotator has said about each.
 *
 * The rule the whole flow hangs on: relevance is only meaningful for
 * evidence that is actually in the note. Presence is answered first, a "no"
 * records a hallucination and locks the relevance scale, and the export
 * refuses to produce rows until every item has a complete answer.
 */

import type { AnnotationRow, EvidenceItem, RelevanceValue } from "./types";
import { RELEVANCE_SCALE } from "./types";

export type PresenceAnswer = "yes" | "no";

export interface ItemDraft {
  presence?: PresenceAnswer;
  relevance?: RelevanceValue;
}

/** Active items ranked most-confident first; abstained items set aside. */
export function orderForReview(items: readonly EvidenceItem[]): {
  active: EvidenceItem[];
  abstained: EvidenceItem[];
} {
  const rank = (item: EvidenceItem) =>
    item.confidence === null ? Number.NEGATIVE_INFINITY : item.confidence;
  // Stable sort: items without confidence (e.g. the extractive baseline,
  // which is already rank-ordered) keep their incoming order at the tail.
  const byConfidence = (a: EvidenceItem, b: EvidenceItem) => {
    const ra = rank(a);
    const rb = rank(b);
    return ra === rb ? 0 : rb - ra;
  };
  return {
    active: items.filter((i) => i.status === "active").sort(byConfidence),
    abstained: items.filter((i) => i.status === "abstained").sort(byConfidence),
  };
}

export class ReviewSession {
  readonly active: readonly EvidenceItem[];
  readonly abstained: readonly EvidenceItem[];
  private readonly drafts = new Map<string, ItemDraft>();
  private readonly byId = new Map<string, EvidenceItem>();

  constructor(items: readonly EvidenceItem[]) {
    const ordered = orderForReview(items);
    this.active = ordered.active;
    this.abstained = ordered.abstained;
    for (const item of this.active) {
      this.byId.set(item.id, item);
      this.drafts.set(item.id, {});
    }
  }

  get size(): number {
    return this.active.length;
  }

  item(id: string): EvidenceItem {
    const item = this.byId.get(id);
    if (!item) throw new Error(`unknown evidence item ${id}`);
    return item;
  }

  draft(id: string): Readonly<ItemDraft> {
    this.item(id);
    return { ...this.drafts.get(id) };
  }

  setPresence(id: string, answer: PresenceAnswer): void {
    this.item(id);
    const draft = this.drafts.get(id)!;
    draft.presence = answer;
    // A hallucination has no usefulness to grade; drop any stale pick.
    if (answer === "no") delete draft.relevance;
  }

  setRelevance(id: string, value: RelevanceValue): void {
    this.item(id);
    if (!RELEVANCE_SCALE.includes(value)) {
      throw new Error(`unknown relevance value ${value}`);
    }
    const draft = this.drafts.get(id)!;
    if (draft.presence !== "yes") {
      throw new Error("presence must be confirmed before relevance can be graded");
    }
    draft.relevance = value;
  }

  /** Complete means: presence "no", or presence "yes" with a grade picked. */
  isComplete(id: string): boolean {
    const draft = this.drafts.get(id);
    if (!draft) return false;
    if (draft.presence === "no") return true;
    return draft.presence === "yes" && draft.relevance !== undefined;
  }

  completedCount(): number {
    return this.active.filter((item) => this.isComplete(item.id)).length;
  }

  hallucinationIds(): string[] {
    return this.active
      .filter((item) => this.drafts.get(item.id)?.presence === "no")
      .map((item) => item.id);
  }

  /**
   * Rows for POST /annotations, in review order.
   *
   * Hallucinations export present_in_note=false with the scale pinned to
   * not_useful — the importer wants a valid scale value on every row, and
   * downstream scoring ignores it whenever presence is false.
   */
  exportRows(annotatorId: string): AnnotationRow[] {
    const annotator = annotatorId.trim();
    if (!annotator) throw new Error("annotator id is required");
    const pending = this.active.filter((item) => !this.isComplete(item.id));
    if (pending.length > 0) {
      throw new Error(`${pending.length} item(s) still unreviewed`);
    }
    return this.active.map((item) => {
      const draft = this.drafts.get(item.id)!;
      const present = draft.presence === "yes";
      return {
        evidence_id: item.id,
        annotator_id: annotator,
        present_in_note: present,
        relevance: present ? draft.relevance! : "not_useful",
      };
    });
  }
}
