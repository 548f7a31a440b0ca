/** Three-pane editor: component palette, graph canvas, parameter sidebar.
 *
 * The canvas renders the focused block's graph; every edit goes through
 * BlockEditor so the document stays schema-valid and undoable, and each
 * edit re-requests validation (debounced).  Diagnostics from the latest
 * report are anchored to nodes, ports and parameter fields.
 */

import { AnchoredDiagnostic, anchorReport } from "./anchors.js";
import { DebouncedValidator, ServiceClient, ValidateResult } from "./client.js";
import {
  BlockDoc,
  BranchSide,
  ComponentDoc,
  DocumentSet,
  INPUT_NODE,
  NodeDoc,
  OUTPUT_NODE,
  componentFilename,
  componentName,
  componentNamespace,
} from "./documents.js";
import { downloadGeneratedZip, ZipFactory } from "./download.js";
import { BlockEditor, ComponentCatalog, PortRef, emptyBlock } from "./editor.js";
import { buildDocumentSet, componentsOf, entryBlockOf, manifestOf } from "./projectset.js";

interface PendingWire {
  from: PortRef;
}

export class EditorApp {
  private editor: BlockEditor;
  private catalog = new ComponentCatalog();
  private documents: DocumentSet = {};
  private projectId = "untitled";
  private revision: string | null = null;
  private validator: DebouncedValidator;
  private anchored: AnchoredDiagnostic[] = [];
  private pendingWire: PendingWire | null = null;

  constructor(
    private readonly root: HTMLElement,
    private readonly client: ServiceClient,
    private readonly zipFactory?: ZipFactory,
  ) {
    this.editor = new BlockEditor(emptyBlock("untitled/Main"), this.catalog);
    this.validator = new DebouncedValidator(client, (r) => this.onReport(r));
    this.root.classList.add("editor-root");
  }

  // --- project plumbing ------------------------------------------------------

  async open(projectId: string): Promise<void> {
    this.projectId = projectId;
    const fetched = await this.client.getProject(projectId);
    if (fetched) {
      this.revision = fetched.revision;
      this.documents = fetched.documents;
    } else {
      this.revision = null;
      const main = emptyBlock(`${projectId}/Main`);
      this.documents = buildDocumentSet(projectId, main.id, [main]);
    }
    this.rebuildCatalog();
    const entry = entryBlockOf(this.documents);
    this.focusBlock(entry ?? emptyBlock(`${projectId}/Main`));
  }

  focusBlock(doc: BlockDoc): void {
    this.editor = new BlockEditor(doc, this.catalog);
    this.render();
    this.revalidate();
  }

  private rebuildCatalog(): void {
    this.catalog = new ComponentCatalog(componentsOf(this.documents));
  }

  /** Current project documents with the focused block's latest state. */
  currentDocuments(): DocumentSet {
    const doc = this.editor.serialize();
    const documents: DocumentSet = { ...this.documents };
    documents[`blocks/${componentFilename(doc.id)}`] = doc;
    return documents;
  }

  async save(): Promise<void> {
    const documents = this.currentDocuments();
    const revision = await this.client.putProject(this.projectId, this.revision, documents);
    if (revision === null) {
      this.banner("save rejected: project changed elsewhere (stale revision)", "error");
      return;
    }
    this.revision = revision;
    this.documents = documents;
    this.editor.dirty = false;
    this.banner(`saved (revision ${revision.slice(0, 18)}…)`, "info");
  }

  async generate(): Promise<void> {
    const result = await this.client.generate(this.currentDocuments());
    if (result.status !== 200) {
      this.banner("generation refused: fix validation errors first", "error");
      if (result.report) this.onReport({ status: 409, report: result.report });
      return;
    }
    const manifest = manifestOf(this.documents);
    if (this.zipFactory) {
      await downloadGeneratedZip(result.files, manifest?.name ?? this.projectId, this.zipFactory);
    }
    this.banner(`generated ${result.files.length} files`, "info");
  }

  /** Vendor a registry package into the project, then refresh the palette. */
  async addRegistryPackage(name: string, version: string): Promise<void> {
    const pkg = await this.client.registryPackage(name, version);
    if (!pkg) {
      this.banner(`package ${name} ${version} not found`, "error");
      return;
    }
    const base = `packages/${name}/${version}`;
    this.documents[`${base}/manifest.json`] = pkg.manifest;
    for (const [path, doc] of Object.entries(pkg.documents)) {
      this.documents[`${base}/${path}`] = doc;
    }
    this.rebuildCatalog();
    this.editor = new BlockEditor(this.editor.serialize(), this.catalog);
    this.render();
  }

  // --- validation ------------------------------------------------------------

  revalidate(): void {
    this.validator.request(this.currentDocuments());
  }

  private onReport(result: ValidateResult): void {
    this.editor.setReport(result.report);
    this.anchored = result.report
      ? anchorReport(result.report.diagnostics, this.editor.serialize())
      : [];
    this.render();
  }

  // --- rendering ---------------------------------------------------------------

  private banner(text: string, kind: "info" | "error"): void {
    const bar = this.root.querySelector<HTMLElement>(".statusbar");
    if (bar) {
      bar.textContent = text;
      bar.dataset.kind = kind;
    }
  }

  render(): void {
    this.root.innerHTML = "";
    this.root.append(
      this.renderPalette(),
      this.renderCanvas(),
      this.renderSidebar(),
      this.renderStatusBar(),
    );
  }

  private renderStatusBar(): HTMLElement {
    const bar = el("div", "statusbar");
    const report = this.editor.lastReport;
    if (report) {
      const errors = report.diagnostics.filter((d) => d.severity === "error").length;
      const warnings = report.diagnostics.length - errors;
      bar.textContent = report.pass
        ? `valid ✓ (${warnings} warning${warnings === 1 ? "" : "s"})`
        : `${errors} error${errors === 1 ? "" : "s"}, ${warnings} warning${warnings === 1 ? "" : "s"}`;
      bar.dataset.kind = report.pass ? "info" : "error";
    } else {
      bar.textContent = "validating…";
    }
    return bar;
  }

  private renderPalette(): HTMLElement {
    const palette = el("aside", "palette");
    palette.append(el("h2", "", "Components"));
    const groups = new Map<string, ComponentDoc[]>();
    for (const component of this.catalog.all()) {
      const group = componentNamespace(component.id);
      if (!groups.has(group)) groups.set(group, []);
      groups.get(group)!.push(component);
    }
    for (const [group, components] of [...groups.entries()].sort()) {
      palette.append(el("h3", "palette-group", group));
      for (const component of components) {
        const item = el("div", "palette-item", componentName(component.id));
        item.title = `${component.id} (${component.input_count} in / ${component.output_count} out)`;
        item.draggable = true;
        item.dataset.componentId = component.id;
        item.addEventListener("dragstart", (event) => {
          event.dataTransfer?.setData("text/component-id", component.id);
        });
        item.addEventListener("dblclick", () => {
          this.dropComponent(component.id, { x: 280, y: 160 });
        });
        palette.append(item);
      }
    }
    const toolbar = el("div", "toolbar");
    toolbar.append(
      button("Undo", () => { this.editor.undo(); this.afterEdit(); }),
      button("Redo", () => { this.editor.redo(); this.afterEdit(); }),
      button("Save", () => void this.save()),
      button("Generate", () => void this.generate()),
    );
    palette.append(toolbar);
    return palette;
  }

  private dropComponent(componentId: string, position: { x: number; y: number }): void {
    const outcome = this.editor.addNode(componentId, position);
    if (!outcome.ok) {
      this.banner(outcome.reason ?? "cannot drop here", "error");
      return;
    }
    this.afterEdit();
  }

  private afterEdit(): void {
    this.render();
    this.revalidate();
  }

  private nodeAnchors(nodeId: string): AnchoredDiagnostic[] {
    return this.anchored.filter(
      (entry) =>
        entry.anchor !== null &&
        "node" in entry.anchor &&
        entry.anchor.node === nodeId,
    );
  }

  private renderCanvas(): HTMLElement {
    const canvas = el("section", "canvas");
    canvas.addEventListener("dragover", (event) => event.preventDefault());
    canvas.addEventListener("drop", (event) => {
      event.preventDefault();
      const componentId = event.dataTransfer?.getData("text/component-id");
      if (componentId) {
        const bounds = canvas.getBoundingClientRect();
        this.dropComponent(componentId, {
          x: event.clientX - bounds.left,
          y: event.clientY - bounds.top,
        });
      }
    });

    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.classList.add("wires");
    canvas.append(svg);

    const pseudoIn = this.renderPseudoNode(INPUT_NODE, this.editor.inputCount, { x: 40, y: 20 });
    const pseudoOut = this.renderPseudoNode(OUTPUT_NODE, this.editor.outputCount, { x: 40, y: 480 });
    canvas.append(pseudoIn, pseudoOut);
    for (const node of this.editor.nodes) {
      canvas.append(this.renderNode(node));
    }
    // Wires are drawn after layout settles so port positions are real.
    queueMicrotask(() => this.drawWires(canvas, svg));
    return canvas;
  }

  private portDot(node: string, port: number, direction: "in" | "out", branch?: BranchSide): HTMLElement {
    const dot = el("span", `port port-${direction}`);
    dot.dataset.node = node;
    dot.dataset.port = String(port);
    if (branch) dot.dataset.branch = branch;
    dot.title = `${node} ${direction} ${port}${branch ? ` (${branch})` : ""}`;
    const hasPortError = this.anchored.some(
      (entry) =>
        entry.anchor?.kind === "port" &&
        entry.anchor.node === node &&
        entry.anchor.port === port &&
        entry.diagnostic.severity === "error",
    );
    if (hasPortError) dot.classList.add("port-error");
    dot.addEventListener("click", (event) => {
      event.stopPropagation();
      this.onPortClick({ node, port }, direction, branch);
    });
    return dot;
  }

  private onPortClick(ref: PortRef, direction: "in" | "out", branch?: BranchSide): void {
    if (direction === "out") {
      this.pendingWire = { from: ref };
      this.banner(`wiring from ${ref.node}#${ref.port}…`, "info");
      return;
    }
    if (!this.pendingWire) {
      this.banner("click an output port first", "error");
      return;
    }
    const outcome = this.editor.connectPorts(this.pendingWire.from, ref, branch);
    this.pendingWire = null;
    if (!outcome.ok) {
      this.banner(outcome.reason ?? "cannot connect", "error");
      return;
    }
    if (outcome.needsJoinPolicy) {
      this.openJoinPicker(outcome.needsJoinPolicy);
    }
    this.afterEdit();
  }

  private openJoinPicker(target: { node: string; port: number; branch?: BranchSide }): void {
    const dialog = el("div", "join-picker");
    dialog.append(el("span", "", `combine edges at ${target.node}#${target.port}:`));
    for (const op of ["add", "concat", "multiply"] as const) {
      dialog.append(
        button(op, () => {
          const axis = op === "concat" ? Number(prompt("concat axis", "1") ?? "1") : undefined;
          this.editor.setJoinPolicy(target.node, target.port, op, axis, target.branch);
          dialog.remove();
          this.afterEdit();
        }),
      );
    }
    this.root.append(dialog);
  }

  private renderPseudoNode(name: string, ports: number, fallback: { x: number; y: number }): HTMLElement {
    const box = el("div", "node pseudo");
    box.style.left = `${fallback.x}px`;
    box.style.top = `${fallback.y}px`;
    box.dataset.nodeId = name;
    box.append(el("header", "", name));
    const row = el("div", "ports");
    for (let port = 0; port < ports; port += 1) {
      row.append(this.portDot(name, port, name === INPUT_NODE ? "out" : "in"));
    }
    box.append(row);
    return box;
  }

  private renderNode(node: NodeDoc): HTMLElement {
    const component = this.catalog.get(node.ref);
    const position = this.editor.positionOf(node.id);
    const box = el("div", "node");
    box.dataset.nodeId = node.id;
    box.style.left = `${position.x}px`;
    box.style.top = `${position.y}px`;
    if (this.editor.selection?.kind === "node" && this.editor.selection.node === node.id) {
      box.classList.add("selected");
    }
    const anchors = this.nodeAnchors(node.id);
    if (anchors.some((a) => a.diagnostic.severity === "error")) {
      box.classList.add("has-error");
      box.title = anchors.map((a) => `${a.diagnostic.code}: ${a.diagnostic.message}`).join("\n");
    }

    const header = el("header", "", componentName(node.ref));
    if (node.repeat !== 1) {
      const badge = typeof node.repeat === "number" ? `×${node.repeat}` : `×${node.repeat.slice(2, -1)}`;
      header.append(el("span", "repeat-badge", badge));
    }
    box.append(header);
    box.append(el("div", "node-id", node.id));

    const inputs = el("div", "ports ports-in");
    const count = component?.input_count ?? 0;
    if (node.kind === "conditional") {
      // true-branch ports on the left, false-branch on the right
      for (let port = 0; port < count; port += 1) {
        inputs.append(this.portDot(node.id, port, "in", "true_side"));
      }
      inputs.append(el("span", "branch-divider", "if/else"));
      for (let port = 0; port < count; port += 1) {
        inputs.append(this.portDot(node.id, port, "in", "false_side"));
      }
    } else {
      for (let port = 0; port < count; port += 1) {
        inputs.append(this.portDot(node.id, port, "in"));
      }
    }
    const outputs = el("div", "ports ports-out");
    for (let port = 0; port < (component?.output_count ?? 0); port += 1) {
      outputs.append(this.portDot(node.id, port, "out"));
    }
    box.prepend(inputs);
    box.append(outputs);

    box.addEventListener("click", () => {
      this.editor.selection = { kind: "node", node: node.id };
      this.render();
    });
    makeDraggable(box, (x, y) => {
      this.editor.moveNode(node.id, { x, y });
    });
    return box;
  }

  private drawWires(canvas: HTMLElement, svg: SVGSVGElement): void {
    const bounds = canvas.getBoundingClientRect();
    svg.setAttribute("width", String(canvas.clientWidth));
    svg.setAttribute("height", String(canvas.clientHeight));
    const portCenter = (node: string, port: number, direction: "in" | "out", branch?: string) => {
      const selector =
        `[data-node-id="${cssEscape(node)}"] .port-${direction}` +
        `[data-port="${port}"]` +
        (branch ? `[data-branch="${branch}"]` : ":not([data-branch])");
      const dot = canvas.querySelector<HTMLElement>(selector);
      if (!dot) return null;
      const rect = dot.getBoundingClientRect();
      return {
        x: rect.left + rect.width / 2 - bounds.left,
        y: rect.top + rect.height / 2 - bounds.top,
      };
    };
    this.editor.edges.forEach((edge, index) => {
      const from = portCenter(edge.from[0], edge.from[1], "out");
      const to = portCenter(edge.to[0], edge.to[1], "in", edge.branch);
      if (!from || !to) return;
      const line = document.createElementNS("http://www.w3.org/2000/svg", "path");
      const midY = (from.y + to.y) / 2;
      line.setAttribute(
        "d",
        `M ${from.x} ${from.y} C ${from.x} ${midY}, ${to.x} ${midY}, ${to.x} ${to.y}`,
      );
      line.classList.add("wire");
      line.addEventListener("click", () => {
        this.editor.selection = { kind: "edge", index };
        this.render();
      });
      if (this.editor.selection?.kind === "edge" && this.editor.selection.index === index) {
        line.classList.add("selected");
      }
      svg.append(line);
    });
  }

  private renderSidebar(): HTMLElement {
    const sidebar = el("aside", "sidebar");
    const selection = this.editor.selection;
    sidebar.append(el("h2", "", "Parameters"));
    if (selection?.kind === "edge") {
      sidebar.append(
        el("p", "", `edge #${selection.index}`),
        button("Delete edge", () => {
          this.editor.removeEdge(selection.index);
          this.editor.selection = null;
          this.afterEdit();
        }),
      );
      return sidebar;
    }
    if (selection?.kind !== "node") {
      sidebar.append(el("p", "hint", "Select a node to edit its parameters."));
      return sidebar;
    }
    const node = this.editor.node(selection.node);
    const component = node && this.catalog.get(node.ref);
    if (!node || !component) return sidebar;

    sidebar.append(el("h3", "", `${node.id} · ${node.ref}`));

    const paramErrors = new Map<string, string[]>();
    for (const entry of this.anchored) {
      if (entry.anchor?.kind === "param" && entry.anchor.node === node.id) {
        const messages = paramErrors.get(entry.anchor.param) ?? [];
        messages.push(`${entry.diagnostic.code}: ${entry.diagnostic.message}`);
        paramErrors.set(entry.anchor.param, messages);
      }
    }

    for (const spec of component.params) {
      const field = el("label", "field");
      field.append(el("span", "field-name", `${spec.name}: ${spec.type}${spec.required ? " *" : ""}`));
      const input = document.createElement("input");
      input.value = bindingText(node.params[spec.name]);
      input.placeholder = spec.default !== undefined ? String(spec.default) : "";
      input.addEventListener("change", () => {
        const outcome = this.editor.editParameter(node.id, spec.name, input.value);
        if (!outcome.ok) {
          field.classList.add("invalid");
          field.append(el("span", "inline-error", outcome.reason ?? "invalid"));
          return;
        }
        this.afterEdit();
      });
      field.append(input);
      for (const message of paramErrors.get(spec.name) ?? []) {
        field.classList.add("invalid");
        field.append(el("span", "inline-error", message));
      }
      sidebar.append(field);
    }

    const repeatField = el("label", "field");
    repeatField.append(el("span", "field-name", "repeat"));
    const repeatInput = document.createElement("input");
    repeatInput.value = typeof node.repeat === "number" ? String(node.repeat) : `\${${node.repeat}}`;
    repeatInput.addEventListener("change", () => {
      const outcome = this.editor.setRepeat(node.id, repeatInput.value);
      if (!outcome.ok) {
        repeatField.classList.add("invalid");
        repeatField.append(el("span", "inline-error", outcome.reason ?? "invalid"));
        return;
      }
      this.afterEdit();
    });
    repeatField.append(repeatInput);
    sidebar.append(repeatField);

    if (node.kind === "conditional") {
      const condField = el("label", "field");
      condField.append(el("span", "field-name", "condition"));
      const condInput = document.createElement("input");
      condInput.value = node.condition ?? "";
      condInput.addEventListener("change", () => {
        this.editor.setCondition(node.id, condInput.value);
        this.afterEdit();
      });
      condField.append(condInput);
      sidebar.append(condField);
    }

    sidebar.append(
      button("Delete node", () => {
        this.editor.removeNode(node.id);
        this.afterEdit();
      }),
    );
    return sidebar;
  }
}

function bindingText(value: unknown): string {
  if (value === undefined) return "";
  if (Array.isArray(value)) return value.join(", ");
  return String(value);
}

function el(tag: string, className = "", text = ""): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function button(label: string, onClick: () => void): HTMLElement {
  const node = document.createElement("button");
  node.textContent = label;
  node.addEventListener("click", onClick);
  return node;
}

function cssEscape(text: string): string {
  return text.replace(/["\\]/g, "\\$&");
}

function makeDraggable(box: HTMLElement, onMove: (x: number, y: number) => void): void {
  box.addEventListener("pointerdown", (event) => {
    if ((event.target as HTMLElement).classList.contains("port")) return;
    const startX = event.clientX;
    const startY = event.clientY;
    const origin = { x: box.offsetLeft, y: box.offsetTop };
    const move = (moveEvent: PointerEvent) => {
      const x = origin.x + (moveEvent.clientX - startX);
      const y = origin.y + (moveEvent.clientY - startY);
      box.style.left = `${x}px`;
      box.style.top = `${y}px`;
      onMove(x, y);
    };
    const up = () => {
      window.removeEventListener("pointermove", move);
      window.removeEventListener("pointerup", up);
    };
    window.addEventListener("pointermove", move);
    window.addEventListener("pointerup", up);
  });
}
