import { ApiClient, parseEmbeddingText } from "./api.js";
import { ApiError, DeclarationForm, PredictResponse } from "./types.js";
import {
  clearBanner,
  clearFieldError,
  renderBanner,
  renderFieldError,
  renderSuggestions,
} from "./view.js";

/** Wires the declaration form to the prediction service.
 *
 * One predict request is in flight at a time; extra submissions queue and
 * run in order. The suggestion list is rendered exactly as the API ranked
 * it. Selecting a suggestion posts feedback once (the buttons lock on the
 * first click); a stale request id turns into a re-submit prompt with the
 * form state intact.
 */
export class ReviewApp {
  private inFlight = false;
  private queue: DeclarationForm[] = [];
  private current: PredictResponse | null = null;
  private feedbackLocked = false;
  private lastForm: DeclarationForm | null = null;
  private image: number[] | null = null;

  constructor(
    private readonly doc: Document,
    private readonly api: ApiClient,
  ) {}

  private el<T extends HTMLElement>(id: string): T {
    const node = this.doc.getElementById(id);
    if (!node) throw new Error(`missing element #${id}`);
    return node as T;
  }

  start(): void {
    this.el<HTMLFormElement>("declaration-form").addEventListener("submit", (event) => {
      event.preventDefault();
      this.submitFromForm();
    });
    this.el<HTMLInputElement>("image-file").addEventListener("change", () => {
      void this.readImageFile();
    });
    this.el<HTMLElement>("results").addEventListener("click", (event) => {
      const target = event.target as HTMLElement;
      if (target.matches("button.choose") && !(target as HTMLButtonElement).disabled) {
        void this.choose(target.dataset.hs6 ?? "");
      }
    });
    this.el<HTMLElement>("banner").addEventListener("click", (event) => {
      const target = event.target as HTMLElement;
      if (target.matches("button.banner-action") && this.lastForm) {
        void this.submit(this.lastForm);
      }
    });
    void this.showHealth();
  }

  private async showHealth(): Promise<void> {
    try {
      const health = await this.api.health();
      this.el("health").textContent =
        `model ${health.model_checksum.slice(0, 12)} · ${health.vocab_size} codes`;
    } catch {
      this.el("health").textContent = "service unreachable";
    }
  }

  private async readImageFile(): Promise<void> {
    const input = this.el<HTMLInputElement>("image-file");
    const file = input.files && input.files[0];
    if (!file) {
      this.image = null;
      return;
    }
    try {
      this.image = parseEmbeddingText(await file.text());
      this.el("image-note").textContent = this.image ? `${this.image.length} values` : "";
    } catch (err) {
      this.image = null;
      input.value = "";
      renderBanner(this.el("banner"), "error", `Bad embedding file: ${(err as Error).message}`);
    }
  }

  readForm(): DeclarationForm {
    return {
      description: this.el<HTMLTextAreaElement>("description").value.trim(),
      title: this.el<HTMLInputElement>("title").value.trim(),
      category: this.el<HTMLInputElement>("category").value.trim(),
      image: this.image,
      k: Number(this.el<HTMLSelectElement>("k-select").value),
    };
  }

  submitFromForm(): void {
    const form = this.readForm();
    if (form.description === "") {
      renderFieldError(this.el("description-error"), "Description is required.");
      return;
    }
    clearFieldError(this.el("description-error"));
    void this.submit(form);
  }

  async submit(form: DeclarationForm): Promise<void> {
    if (this.inFlight) {
      this.queue.push(form);
      return;
    }
    this.inFlight = true;
    this.lastForm = form;
    clearBanner(this.el("banner"));
    try {
      const response = await this.api.predict(form);
      this.current = response;
      this.feedbackLocked = false;
      renderSuggestions(this.el("results"), response.suggestions);
    } catch (err) {
      if (err instanceof ApiError) {
        if (err.status === 400) {
          renderFieldError(this.el("description-error"), err.message);
        } else {
          renderBanner(this.el("banner"), "error", `Prediction failed: ${err.message}`);
        }
      } else {
        // network-level failure: keep the form, offer a retry
        renderBanner(this.el("banner"), "retry", "Could not reach the service.", "Retry");
      }
    } finally {
      this.inFlight = false;
      const next = this.queue.shift();
      if (next) void this.submit(next);
    }
  }

  private setChooseButtonsDisabled(disabled: boolean): void {
    for (const button of this.el("results").querySelectorAll<HTMLButtonElement>("button.choose")) {
      button.disabled = disabled;
    }
  }

  async choose(hs6: string): Promise<void> {
    if (!this.current || this.feedbackLocked) return;
    this.feedbackLocked = true; // first click wins; double-clicks are no-ops
    this.setChooseButtonsDisabled(true);
    try {
      const ack = await this.api.feedback(this.current.request_id, hs6);
      renderBanner(this.el("banner"), "confirm", `Recorded ${ack.hs6}. Ready for the next declaration.`);
      this.current = null;
      this.el("results").innerHTML = "";
      this.resetForm();
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        // request id fell out of the server's window: suggestions are stale
        this.current = null;
        renderBanner(this.el("banner"), "retry", "These suggestions expired.", "Re-submit");
      } else {
        this.feedbackLocked = false;
        this.setChooseButtonsDisabled(false);
        const message = err instanceof ApiError ? err.message : "Could not reach the service.";
        renderBanner(this.el("banner"), "error", `Feedback failed: ${message}`);
      }
    }
  }

  private resetForm(): void {
    this.el<HTMLTextAreaElement>("description").value = "";
    this.el<HTMLInputElement>("title").value = "";
    this.el<HTMLInputElement>("category").value = "";
    this.el<HTMLInputElement>("image-file").value = "";
    this.el("image-note").textContent = "";
    this.image = null;
  }
}
