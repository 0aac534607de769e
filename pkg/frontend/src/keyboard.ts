import type { ReviewSession } from "./session.js";

export type SessionAction =
  | { kind: "affirm-all" }
  | { kind: "negate-all" }
  | { kind: "toggle-patch"; index: number }
  | { kind: "next" };

/**
 * Map a keypress to a session action. `a` affirms, `n` negates, digits 1-9
 * toggle the corresponding member patch (0 toggles the tenth), Enter or
 * Space submits and advances. Returns null for unbound keys.
 */
export function actionForKey(key: string): SessionAction | null {
  if (key === "a" || key === "A") return { kind: "affirm-all" };
  if (key === "n" || key === "N") return { kind: "negate-all" };
  if (key === "Enter" || key === " ") return { kind: "next" };
  if (/^[0-9]$/.test(key)) {
    const index = key === "0" ? 9 : Number(key) - 1;
    return { kind: "toggle-patch", index };
  }
  return null;
}

export async function applyAction(
  session: ReviewSession,
  action: SessionAction,
): Promise<void> {
  switch (action.kind) {
    case "affirm-all":
      session.affirmAll();
      break;
    case "negate-all":
      session.negateAll();
      break;
    case "toggle-patch":
      session.togglePatch(action.index);
      break;
    case "next":
      await session.submitAndNext();
      break;
  }
}
