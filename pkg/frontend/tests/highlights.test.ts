import { describe, expect, it } from "vitest";

import { highlightIndexesFor, noteSegments } from "../src/highlights";
import { makeItem, makeNote } from "./fixtures";

const NOTE_TEXT = "Alpha one. Beta two. Gamma three.";
// Sentences cover [0,10), [11,20), [21,33); the gaps are the joining spaces.
const note = makeNote("n1", NOTE_TEXT, [
  [0, 10],
  [11, 20],
  [21, 33],
]);

describe("highlightIndexesFor", () => {
  it("keeps only highlights that point at the displayed note", () => {
    const item = makeItem({
      id: "e1",
      highlights: [
        { note_id: "n1", sentence_index: 2, score: 0.9 },
        { note_id: "other", sentence_index: 0, score: 0.8 },
        { note_id: "n1", sentence_index: 0, score: 0.7 },
      ],
    });
    expect(highlightIndexesFor(item, "n1").sort()).toEqual([0, 2]);
    expect(highlightIndexesFor(item, "n9")).toEqual([]);
  });
});

describe("noteSegments", () => {
  it("reassembles the exact note text, marking only the wanted sentences", () => {
    const segments = noteSegments(note, [1]);
    expect(segments.map((s) => s.text).join("")).toBe(NOTE_TEXT);
    const marked = segments.filter((s) => s.highlighted);
    expect(marked).toEqual([
      { text: "Beta two.", highlighted: true, sentenceIndex: 1 },
    ]);
    // Gap segments carry no sentence index.
    const gaps = segments.filter((s) => s.sentenceIndex === null);
    expect(gaps.every((s) => !s.highlighted)).toBe(true);
    expect(gaps.map((s) => s.text)).toEqual([" ", " "]);
  });

  it("handles zero highlights and all highlights", () => {
    expect(noteSegments(note, []).every((s) => !s.highlighted)).toBe(true);
    const all = noteSegments(note, [0, 1, 2]);
    expect(all.filter((s) => s.highlighted).length).toBe(3);
    expect(all.map((s) => s.text).join("")).toBe(NOTE_TEXT);
  });

  it("tolerates sentences arriving out of order and text with a ragged tail", () => {
    const tailText = "One. Two.  trailing fragment";
    const shuffled = makeNote("n2", tailText, [
      [5, 9],
      [0, 4],
    ]);
    // makeNote assigns index by array position, so index 0 is "Two." here.
    const segments = noteSegments(shuffled, [0]);
    expect(segments.map((s) => s.text).join("")).toBe(tailText);
    const marked = segments.filter((s) => s.highlighted);
    expect(marked.map((s) => s.text)).toEqual(["Two."]);
    expect(segments[segments.length - 1]).toEqual({
      text: "  trailing fragment",
      highlighted: false,
      sentenceIndex: null,
    });
  });

  it("ignores highlight indexes that have no matching sentence", () => {
    const segments = noteSegments(note, [7]);
    expect(segments.every((s) => !s.highlighted)).toBe(true);
    expect(segments.map((s) => s.text).join("")).toBe(NOTE_TEXT);
  });
});
