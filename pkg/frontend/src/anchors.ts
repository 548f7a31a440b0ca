/** Map report diagnostics onto canvas elements.
 *
 * Every error in a report must light up something the user can click: a
 * node badge, a port dot, a parameter field, or the block header.  A
 * diagnostic raised inside a nested block instance is anchored to the node
 * that instantiates it (the first segment of its instance path).
 */

import { BlockDoc, DiagnosticDoc } from "./documents.js";

export type Anchor =
  | { kind: "node"; node: string }
  | { kind: "port"; node: string; port: number }
  | { kind: "param"; node: string; param: string }
  | { kind: "block" };

const PARAM_CODES = new Set(["PARAM_MISSING", "PARAM_TYPE", "PARAM_RANGE", "PARAM_UNKNOWN"]);


function nodeExists(doc: BlockDoc, node: string): boolean {
  return node === "Input" || node === "Output" || doc.nodes.some((n) => n.id === node);
}

/** First path segment without repeat/branch decorations: "bneck[2]" -> "bneck". */
function pathHead(path: string): string {
  const head = path.split("/")[0];
  return head.replace(/\[[^\]]*\]$/, "").replace(/@(true|false)$/, "");
}

export function anchorFor(diagnostic: DiagnosticDoc, doc: BlockDoc): Anchor | null {
  if (diagnostic.block === doc.id && !diagnostic.path) {
    const node = diagnostic.node;
    if (node !== undefined && nodeExists(doc, node)) {
      if (diagnostic.param !== undefined && PARAM_CODES.has(diagnostic.code)) {
        return { kind: "param", node, param: diagnostic.param };
      }
      if (diagnostic.port !== undefined) {
        return { kind: "port", node, port: diagnostic.port };
      }
      return { kind: "node", node };
    }
    if (diagnostic.param !== undefined) {
      return { kind: "block" };
    }
    return { kind: "block" };
  }
  // Raised inside a nested instance: point at the instantiating node.
  if (diagnostic.path) {
    const head = pathHead(diagnostic.path);
    if (nodeExists(doc, head)) return { kind: "node", node: head };
  }
  if (diagnostic.block === doc.id) return { kind: "block" };
  return null;
}

export interface AnchoredDiagnostic {
  diagnostic: DiagnosticDoc;
  anchor: Anchor | null;
}

/** Anchor every diagnostic of a report against the focused block. */
export function anchorReport(
  diagnostics: DiagnosticDoc[],
  doc: BlockDoc,
): AnchoredDiagnostic[] {
  return diagnostics.map((diagnostic) => ({
    diagnostic,
    anchor: anchorFor(diagnostic, doc),
  }));
}

/** True when every error-severity diagnostic found an anchor. */
export function allErrorsAnchored(anchored: AnchoredDiagnostic[]): boolean {
  return anchored.every(
    (entry) => entry.diagnostic.severity !== "error" || entry.anchor !== null,
  );
}
