/**
 * App bootstrap: a small setup panel (patient, condition, mode) above the
 * review screen. All real logic lives in session/render/api; this file only
 * wires them together.
 */

import { ApiClient, ApiError } from "./api";
import { renderReview } from "./render";
import type { NoteDetail, RunMode } from "./types";

const STYLES = ["flan", "mistral", "choice_then_stepwise", "concise"];
const MODES: RunMode[] = ["sequential", "single", "baseline"];

const client = new ApiClient(
  localStorage.getItem("evscout.baseUrl") ?? "",
  localStorage.getItem("evscout.token") ?? undefined,
);

const app = document.getElementById("app");
if (!app) throw new Error("missing #app mount point");

const setup = document.createElement("form");
setup.className = "setup";
setup.innerHTML = `
  <span class="server-status">connecting…</span>
  <label>Patient <select name="patient"></select></label>
  <label>Condition <input name="condition" placeholder="e.g. stroke" required></label>
  <label>Mode <select name="mode">${MODES.map((m) => `<option>${m}</option>`).join("")}</select></label>
  <label>Style <select name="style">${STYLES.map((s) => `<option>${s}</option>`).join("")}</select></label>
  <label>Abstain below <input name="threshold" type="number" min="0" max="1" step="0.05"></label>
  <button type="submit">Retrieve evidence</button>
  <span class="setup-status"></span>
`;
const reviewMount = document.createElement("div");
app.replaceChildren(setup, reviewMount);

const serverStatus = setup.querySelector<HTMLElement>(".server-status")!;
const setupStatus = setup.querySelector<HTMLElement>(".setup-status")!;
const patientSelect = setup.querySelector<HTMLSelectElement>("select[name=patient]")!;

async function boot(): Promise<void> {
  try {
    const health = await client.health();
    serverStatus.textContent = `${health.patients} patients · ${health.corpus_notes} notes`;
    const patients = await client.patients();
    patientSelect.replaceChildren(
      ...patients.map((p) => {
        const option = document.createElement("option");
        option.value = p.patient_id;
        option.textContent = `${p.patient_id} (${p.note_count} notes)`;
        return option;
      }),
    );
  } catch (err) {
    serverStatus.textContent = `service unreachable: ${err instanceof Error ? err.message : err}`;
  }
}

setup.addEventListener("submit", async (event) => {
  event.preventDefault();
  const data = new FormData(setup);
  const patientId = String(data.get("patient") ?? "");
  const condition = String(data.get("condition") ?? "").trim();
  if (!patientId || !condition) return;
  const threshold = String(data.get("threshold") ?? "");
  setupStatus.textContent = "running…";
  try {
    const evidence = await client.runEvidence(patientId, {
      condition,
      mode: String(data.get("mode")) as RunMode,
      style: String(data.get("style")),
      ...(threshold ? { abstain_threshold: Number(threshold) } : {}),
    });
    const notes = await client.patientNotes(patientId);
    const byId = new Map<string, NoteDetail>(notes.notes.map((n) => [n.note_id, n]));
    setupStatus.textContent = evidence.cached ? `run ${evidence.run_id} (cached)` : `run ${evidence.run_id}`;
    if (evidence.excluded) {
      setupStatus.textContent += " — excluded: evidence count exceeds the per-diagnosis cap";
    }
    renderReview(reviewMount, {
      bundle: evidence.bundle,
      notes: byId,
      onSubmit: async (rows) => {
        const result = await client.importAnnotations(rows);
        setupStatus.textContent = `annotations stored: ${result.total} total`;
      },
    });
  } catch (err) {
    setupStatus.textContent =
      err instanceof ApiError ? `error ${err.status}: ${err.detail}` : String(err);
  }
});

void boot();
