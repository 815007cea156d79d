/** Keyboard-first review flow: A accepts, R rejects, arrows move through the
 * queue, digits toggle layers, E exports. */

export interface KeyHandlers {
  accept: () => void;
  reject: () => void;
  next: () => void;
  prev: () => void;
  toggleLayer: (index: number) => void;
  exportMask: () => void;
  sliceUp: () => void;
  sliceDown: () => void;
}

type SimpleAction = Exclude<keyof KeyHandlers, "toggleLayer">;

/** Pure key -> action mapping so the binding logic is testable without DOM.
 * Numbers select layer toggles; names map to zero-argument handlers. */
export function actionForKey(key: string): SimpleAction | number | null {
  switch (key) {
    case "a":
    case "A":
      return "accept";
    case "r":
    case "R":
      return "reject";
    case "ArrowDown":
    case "ArrowRight":
      return "next";
    case "ArrowUp":
    case "ArrowLeft":
      return "prev";
    case "e":
    case "E":
      return "exportMask";
    case "]":
    case "PageUp":
      return "sliceUp";
    case "[":
    case "PageDown":
      return "sliceDown";
    default: {
      const digit = Number(key);
      return Number.isInteger(digit) && digit >= 1 && digit <= 5 ? digit - 1 : null;
    }
  }
}

export function bindKeys(target: EventTarget, handlers: KeyHandlers): () => void {
  const onKey = (event: Event) => {
    const e = event as KeyboardEvent;
    const el = e.target as HTMLElement | null;
    if (el && (el.tagName === "INPUT" || el.tagName === "TEXTAREA")) return;
    const action = actionForKey(e.key);
    if (action === null) return;
    e.preventDefault();
    if (typeof action === "number") {
      handlers.toggleLayer(action);
    } else {
      handlers[action]();
    }
  };
  target.addEventListener("keydown", onKey);
  return () => target.removeEventListener("keydown", onKey);
}
