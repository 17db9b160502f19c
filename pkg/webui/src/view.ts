import { Suggestion } from "./types.js";

function esc(s: string): string {
  return s.replace(/[&<>"']/g, (ch) => {
    switch (ch) {
      case "&": return "&amp;";
      case "<": return "&lt;";
      case ">": return "&gt;";
      case '"': return "&quot;";
      default: return "&#39;";
    }
  });
}

/** Render the ranked suggestions exactly in response order: one row per
 * suggestion with a probability bar and HS2/HS4 grouping chips. */
export function renderSuggestions(root: HTMLElement, suggestions: Suggestion[]): void {
  if (suggestions.length === 0) {
    root.innerHTML = '<p class="empty">No suggestions.</p>';
    return;
  }
  const rows = suggestions.map((s) => {
    const pct = Math.max(0.5, s.prob * 100);
    return `
      <li class="suggestion" data-hs6="${esc(s.hs6)}" data-rank="${s.rank}">
        <span class="rank">#${s.rank}</span>
        <span class="code">${esc(s.hs6)}</span>
        <span class="prefixes">HS2 ${esc(s.hs2)} &middot; HS4 ${esc(s.hs4)}</span>
        <span class="bar-track"><span class="bar" style="width:${pct.toFixed(2)}%"></span></span>
        <span class="prob">${(s.prob * 100).toFixed(1)}%</span>
        <button type="button" class="choose" data-hs6="${esc(s.hs6)}">Select</button>
      </li>`;
  });
  root.innerHTML = `<ul class="suggestions">${rows.join("")}</ul>`;
}

export type BannerKind = "error" | "retry" | "confirm" | "info";

export function renderBanner(root: HTMLElement, kind: BannerKind, message: string, action?: string): void {
  const button = action ? `<button type="button" class="banner-action">${esc(action)}</button>` : "";
  root.innerHTML = `<div class="banner banner-${kind}">${esc(message)}${button}</div>`;
}

export function clearBanner(root: HTMLElement): void {
  root.innerHTML = "";
}

export function renderFieldError(field: HTMLElement, message: string): void {
  field.textContent = message;
  field.classList.add("visible");
}

export function clearFieldError(field: HTMLElement): void {
  field.textContent = "";
  field.classList.remove("visible");
}
