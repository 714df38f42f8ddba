/**
 * Mapping evidence highlights onto note text.
 *
 * The service sends sentence spans (start/end character offsets) alongside
 * each note, and each evidence item carries the sentence indexes that
 * support it. This module turns the pair into a flat list of text segments
 * covering the whole note, so rendering is a single pass with no slicing
 * logic in the view.
 */

import type { EvidenceItem, NoteDetail } from "./types";

export interface NoteSegment {
  text: string;
  highlighted: boolean;
  /** Sentence index for sentence segments; null for inter-sentence gaps. */
  sentenceIndex: number | null;
}

/** Sentence indexes of this item's highlights within one note. */
export function highlightIndexesFor(item: EvidenceItem, noteId: string): number[] {
  return item.highlights
    .filter((h) => h.note_id === noteId)
    .map((h) => h.sentence_index);
}

/**
 * Split a note's text into segments; concatenating segment texts yields the
 * original text exactly. Whitespace between sentences becomes unhighlighted
 * gap segments.
 */
export function noteSegments(note: NoteDetail, highlightIndexes: Iterable<number>): NoteSegment[] {
  const wanted = new Set(highlightIndexes);
  const sentences = [...note.sentences].sort((a, b) => a.start - b.start);
  const segments: NoteSegment[] = [];
  let cursor = 0;
  for (const sentence of sentences) {
    if (sentence.start > cursor) {
      segments.push({
        text: note.text.slice(cursor, sentence.start),
        highlighted: false,
        sentenceIndex: null,
      });
    }
    segments.push({
      text: note.text.slice(sentence.start, sentence.end),
      highlighted: wanted.has(sentence.index),
      sentenceIndex: sentence.index,
    });
    cursor = sentence.end;
  }
  if (cursor < note.text.length) {
    segments.push({ text: note.text.slice(cursor), highlighted: false, sentenceIndex: null });
  }
  return segments;
}
