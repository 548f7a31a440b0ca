/** Editor state for one block graph.
 *
 * All mutations go through action methods that snapshot the serializable
 * document onto the undo stack first, so undo/redo round-trips state and
 * the canvas always serializes to a schema-valid block document.  Node
 * positions are layout hints only; they live in the document's `layout`
 * field and are ignored by validation and generation.
 */

import {
  BindingValue,
  BlockDoc,
  BranchSide,
  ComponentDoc,
  DiagnosticDoc,
  EdgeDoc,
  FORMAT_VERSION,
  INPUT_NODE,
  JoinDoc,
  NodeDoc,
  OUTPUT_NODE,
  ParamSpecDoc,
  PortEnd,
  ReportDoc,
} from "./documents.js";

export interface Position {
  x: number;
  y: number;
}

export interface PortRef {
  node: string;
  port: number;
}

export type Selection =
  | { kind: "node"; node: string }
  | { kind: "edge"; index: number }
  | null;

export interface ConnectOutcome {
  ok: boolean;
  reason?: string;
  /** Set when the target port now has fan-in > 1 and no policy yet: the
   * join-policy picker should open for this port. */
  needsJoinPolicy?: { node: string; port: number; branch?: BranchSide };
}

export interface DropOutcome {
  ok: boolean;
  nodeId?: string;
  reason?: string;
}

/** Looks up component interfaces for refs placed on the canvas. */
export class ComponentCatalog {
  private readonly byId = new Map<string, ComponentDoc>();

  constructor(components: Iterable<ComponentDoc> = []) {
    for (const component of components) this.add(component);
  }

  add(component: ComponentDoc): void {
    this.byId.set(component.id, component);
  }

  get(id: string): ComponentDoc | undefined {
    return this.byId.get(id);
  }

  all(): ComponentDoc[] {
    return [...this.byId.values()].sort((a, b) => a.id.localeCompare(b.id));
  }

  /** True when placing `ref` inside `hostId` would recurse (A contains A). */
  wouldRecurse(hostId: string, ref: string): boolean {
    if (ref === hostId) return true;
    const seen = new Set<string>();
    const stack = [ref];
    while (stack.length > 0) {
      const current = stack.pop()!;
      if (current === hostId) return true;
      if (seen.has(current)) continue;
      seen.add(current);
      const component = this.byId.get(current);
      if (component && component.kind === "block") {
        for (const node of component.nodes) stack.push(node.ref);
      }
    }
    return false;
  }
}

const UNDO_DEPTH = 100;

export class BlockEditor {
  readonly catalog: ComponentCatalog;
  private doc: BlockDoc;
  private positions: Map<string, Position>;
  private undoStack: string[] = [];
  private redoStack: string[] = [];
  selection: Selection = null;
  dirty = false;
  lastReport: ReportDoc | null = null;
  private counter = 0;

  constructor(doc: BlockDoc, catalog: ComponentCatalog) {
    this.catalog = catalog;
    this.doc = structuredClone(doc);
    this.positions = new Map(
      Object.entries((doc.layout ?? {}) as Record<string, Position>).filter(
        ([, v]) => v && typeof v === "object" && "x" in v,
      ),
    );
  }

  get blockId(): string {
    return this.doc.id;
  }

  get inputCount(): number {
    return this.doc.input_count;
  }

  get outputCount(): number {
    return this.doc.output_count;
  }

  get nodes(): readonly NodeDoc[] {
    return this.doc.nodes;
  }

  get edges(): readonly EdgeDoc[] {
    return this.doc.edges;
  }

  get joins(): readonly JoinDoc[] {
    return this.doc.joins;
  }

  get params(): readonly ParamSpecDoc[] {
    return this.doc.params;
  }

  node(id: string): NodeDoc | undefined {
    return this.doc.nodes.find((n) => n.id === id);
  }

  positionOf(id: string): Position {
    return this.positions.get(id) ?? { x: 0, y: 0 };
  }

  /** The schema-valid block document, layout hints included. */
  serialize(): BlockDoc {
    const doc = structuredClone(this.doc);
    const layout: Record<string, Position> = {};
    for (const [id, pos] of [...this.positions.entries()].sort()) {
      layout[id] = { x: pos.x, y: pos.y };
    }
    if (Object.keys(layout).length > 0) doc.layout = layout;
    else delete doc.layout;
    return doc;
  }

  // --- undo ---------------------------------------------------------------

  private checkpoint(): void {
    this.undoStack.push(JSON.stringify(this.serialize()));
    if (this.undoStack.length > UNDO_DEPTH) this.undoStack.shift();
    this.redoStack = [];
    this.dirty = true;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  undo(): boolean {
    const snapshot = this.undoStack.pop();
    if (snapshot === undefined) return false;
    this.redoStack.push(JSON.stringify(this.serialize()));
    this.restore(snapshot);
    return true;
  }

  redo(): boolean {
    const snapshot = this.redoStack.pop();
    if (snapshot === undefined) return false;
    this.undoStack.push(JSON.stringify(this.serialize()));
    this.restore(snapshot);
    return true;
  }

  private restore(snapshot: string): void {
    const doc = JSON.parse(snapshot) as BlockDoc;
    this.positions = new Map(
      Object.entries((doc.layout ?? {}) as Record<string, Position>),
    );
    delete doc.layout;
    const layoutless = structuredClone(doc);
    this.doc = layoutless;
    this.dirty = true;
  }

  // --- palette drop ---------------------------------------------------------

  /** Place a component instance with defaulted parameters at `position`. */
  addNode(componentId: string, position: Position, options?: { conditional?: boolean }): DropOutcome {
    const component = this.catalog.get(componentId);
    if (!component) {
      return { ok: false, reason: `unknown component ${componentId}` };
    }
    if (this.catalog.wouldRecurse(this.doc.id, componentId)) {
      return { ok: false, reason: "a block cannot contain itself (directly or transitively)" };
    }
    this.checkpoint();
    const base = componentNameStub(componentId);
    let nodeId = `${base}_${this.counter}`;
    while (this.node(nodeId)) nodeId = `${base}_${++this.counter}`;
    this.counter += 1;
    const params: Record<string, BindingValue> = {};
    for (const spec of component.params) {
      if (spec.default !== undefined) params[spec.name] = spec.default;
    }
    const node: NodeDoc = {
      id: nodeId,
      ref: componentId,
      params,
      repeat: 1,
      kind: options?.conditional ? "conditional" : "normal",
    };
    if (options?.conditional) node.condition = "${True}";
    this.doc.nodes.push(node);
    this.positions.set(nodeId, { ...position });
    this.selection = { kind: "node", node: nodeId };
    return { ok: true, nodeId };
  }

  removeNode(nodeId: string): boolean {
    if (!this.node(nodeId)) return false;
    this.checkpoint();
    this.doc.nodes = this.doc.nodes.filter((n) => n.id !== nodeId);
    this.doc.edges = this.doc.edges.filter(
      (e) => e.from[0] !== nodeId && e.to[0] !== nodeId,
    );
    this.doc.joins = this.doc.joins.filter((j) => j.node !== nodeId);
    this.positions.delete(nodeId);
    if (this.selection?.kind === "node" && this.selection.node === nodeId) {
      this.selection = null;
    }
    return true;
  }

  moveNode(nodeId: string, position: Position): void {
    this.positions.set(nodeId, { ...position });
    this.dirty = true; // layout-only change; not an undoable document edit
  }

  // --- wiring ----------------------------------------------------------------

  private portCounts(nodeId: string): { inputs: number; outputs: number } | null {
    if (nodeId === INPUT_NODE) return { inputs: 0, outputs: this.doc.input_count };
    if (nodeId === OUTPUT_NODE) return { inputs: this.doc.output_count, outputs: 0 };
    const node = this.node(nodeId);
    if (!node) return null;
    const component = this.catalog.get(node.ref);
    if (!component) return null;
    return { inputs: component.input_count, outputs: component.output_count };
  }

  fanIn(nodeId: string, port: number, branch?: BranchSide): number {
    return this.doc.edges.filter(
      (e) => e.to[0] === nodeId && e.to[1] === port && (branch === undefined || e.branch === branch),
    ).length;
  }

  joinFor(nodeId: string, port: number, branch?: BranchSide): JoinDoc | undefined {
    return this.doc.joins.find(
      (j) => j.node === nodeId && j.port === port && (j.branch ?? undefined) === branch,
    );
  }

  /** Wire an output port to an input port.  Output-to-output (and any other
   * direction error) is rejected inline; a second edge into the same port
   * reports that the join-policy picker should open. */
  connectPorts(from: PortRef, to: PortRef, branch?: BranchSide): ConnectOutcome {
    const source = this.portCounts(from.node);
    const target = this.portCounts(to.node);
    if (!source || !target) return { ok: false, reason: "unknown node" };
    if (from.node === OUTPUT_NODE || from.port >= source.outputs) {
      return { ok: false, reason: "edges must start at an output port" };
    }
    if (to.node === INPUT_NODE || to.port >= target.inputs) {
      return { ok: false, reason: "edges must end at an input port" };
    }
    const targetNode = this.node(to.node);
    if (targetNode?.kind === "conditional" && branch === undefined) {
      return { ok: false, reason: "pick the true or false side of the conditional node" };
    }
    if (targetNode?.kind !== "conditional" && branch !== undefined) {
      return { ok: false, reason: "only conditional nodes have branch sides" };
    }
    this.checkpoint();
    const edge: EdgeDoc = { from: [from.node, from.port], to: [to.node, to.port] };
    if (branch !== undefined) edge.branch = branch;
    this.doc.edges.push(edge);
    const fanIn = this.fanIn(to.node, to.port, branch);
    if (fanIn > 1 && !this.joinFor(to.node, to.port, branch)) {
      return { ok: true, needsJoinPolicy: { node: to.node, port: to.port, branch } };
    }
    return { ok: true };
  }

  removeEdge(index: number): boolean {
    if (index < 0 || index >= this.doc.edges.length) return false;
    this.checkpoint();
    this.doc.edges.splice(index, 1);
    return true;
  }

  setJoinPolicy(
    node: string,
    port: number,
    op: JoinDoc["op"],
    concatAxis?: number,
    branch?: BranchSide,
  ): void {
    this.checkpoint();
    this.doc.joins = this.doc.joins.filter(
      (j) => !(j.node === node && j.port === port && (j.branch ?? undefined) === branch),
    );
    const join: JoinDoc = { node, port, op };
    if (op === "concat") join.concat_axis = concatAxis ?? 1;
    if (branch !== undefined) join.branch = branch;
    this.doc.joins.push(join);
  }

  // --- parameter editing -------------------------------------------------------

  /** Update one binding from sidebar input.  Raw text is converted by the
   * parameter's declared type; `${...}` text becomes an expression binding
   * and empty text clears the binding. */
  editParameter(nodeId: string, name: string, raw: string): { ok: boolean; reason?: string } {
    const node = this.node(nodeId);
    if (!node) return { ok: false, reason: `unknown node ${nodeId}` };
    const component = this.catalog.get(node.ref);
    const spec = component?.params.find((p) => p.name === name);
    if (!spec) return { ok: false, reason: `unknown parameter ${name}` };
    const trimmed = raw.trim();
    if (trimmed === "") {
      this.checkpoint();
      delete node.params[name];
      return { ok: true };
    }
    const converted = convertBinding(trimmed, spec);
    if (converted === undefined) {
      // invalid entry stays in the widget with an inline error; the document
      // keeps its last good value
      return { ok: false, reason: `cannot read ${JSON.stringify(raw)} as ${spec.type}` };
    }
    this.checkpoint();
    node.params[name] = converted;
    return { ok: true };
  }

  setRepeat(nodeId: string, raw: string): { ok: boolean; reason?: string } {
    const node = this.node(nodeId);
    if (!node) return { ok: false, reason: `unknown node ${nodeId}` };
    const trimmed = raw.trim();
    let repeat: number | string;
    if (/^\d+$/.test(trimmed)) {
      repeat = Number(trimmed);
      if (repeat < 1) return { ok: false, reason: "repeat must be at least 1" };
    } else if (/^\$\{[A-Za-z_][A-Za-z0-9_]*\}$/.test(trimmed)) {
      repeat = trimmed;
    } else {
      return { ok: false, reason: "repeat is a positive integer or ${param}" };
    }
    this.checkpoint();
    node.repeat = repeat;
    return { ok: true };
  }

  setCondition(nodeId: string, expression: string): { ok: boolean; reason?: string } {
    const node = this.node(nodeId);
    if (!node || node.kind !== "conditional") {
      return { ok: false, reason: "only conditional nodes take a condition" };
    }
    this.checkpoint();
    node.condition = expression.startsWith("${") ? expression : `\${${expression}}`;
    return { ok: true };
  }

  // --- block interface editing ---------------------------------------------------

  setBlockParams(specs: ParamSpecDoc[]): void {
    this.checkpoint();
    this.doc.params = structuredClone(specs);
  }

  setPortCounts(inputs: number, outputs: number): void {
    this.checkpoint();
    this.doc.input_count = inputs;
    this.doc.output_count = outputs;
  }

  setInputPatterns(patterns: (number | string)[][] | null): void {
    this.checkpoint();
    this.doc.input_patterns = patterns;
  }

  setReport(report: ReportDoc | null): void {
    this.lastReport = report;
  }
}

function componentNameStub(componentId: string): string {
  const name = componentId.slice(componentId.indexOf("/") + 1);
  const cleaned = name.replace(/[^A-Za-z0-9_]/g, "_").toLowerCase();
  return cleaned || "node";
}

/** Convert sidebar text into a binding value for the given spec. */
export function convertBinding(
  text: string,
  spec: ParamSpecDoc,
): BindingValue | undefined {
  if (text.startsWith("${") && text.endsWith("}")) return text; // expression
  switch (spec.type) {
    case "int": {
      if (!/^-?\d+$/.test(text)) return undefined;
      return Number(text);
    }
    case "float": {
      const value = Number(text);
      return Number.isFinite(value) ? value : undefined;
    }
    case "bool": {
      if (text === "true" || text === "True") return true;
      if (text === "false" || text === "False") return false;
      return undefined;
    }
    case "string":
      return text;
    case "int_list":
    case "shape": {
      const parts = text.replace(/^\[|\]$/g, "").split(",").map((p) => p.trim()).filter(Boolean);
      const values = parts.map(Number);
      if (values.some((v) => !Number.isInteger(v))) return undefined;
      return values;
    }
  }
}

/** A fresh, empty block document for starting a new canvas. */
export function emptyBlock(id: string, inputs = 1, outputs = 1): BlockDoc {
  return {
    format_version: FORMAT_VERSION,
    kind: "block",
    id,
    input_count: inputs,
    output_count: outputs,
    input_patterns: null,
    output_exprs: null,
    params: [],
    local_vars: [],
    nodes: [],
    edges: [],
    joins: [],
  };
}

/** Sugar used by tests and the app for the common single-port wiring. */
export function port(node: string, portIndex = 0): PortRef {
  return { node, port: portIndex };
}

export type { BlockDoc, DiagnosticDoc, EdgeDoc, JoinDoc, NodeDoc, PortEnd };
