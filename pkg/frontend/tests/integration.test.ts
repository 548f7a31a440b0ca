/** End-to-end: editor-built graphs round-trip through the live service.
 *
 * Spawns the real compiler service, vendors the standard component package
 * through the registry API, constructs the activation and bottleneck blocks
 * with editor actions, and checks validation plus diagnostic anchoring for
 * deliberately injected faults.
 */

import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { createServer } from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { allErrorsAnchored, anchorReport } from "../src/anchors.js";
import { ServiceClient } from "../src/client.js";
import { BlockDoc, ComponentDoc, MutatorDoc, ParamSpecDoc } from "../src/documents.js";
import { BlockEditor, ComponentCatalog, emptyBlock, port } from "../src/editor.js";
import { buildDocumentSet } from "../src/projectset.js";

const PYTHON = process.env.PROTOML_PYTHON ?? "python3";

let service: ChildProcess;
let client: ServiceClient;
let stdComponents: ComponentDoc[];
let catalog: ComponentCatalog;

async function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const address = probe.address();
      probe.close(() => resolve((address as { port: number }).port));
    });
  });
}

beforeAll(async () => {
  const scratch = mkdtempSync(join(tmpdir(), "protoml-ui-"));
  const seeded = spawnSync(
    PYTHON,
    [
      "-c",
      [
        "import sys",
        "from protoml.stdlib import build_std_package",
        "from protoml.registry import publish",
        `build_std_package(r'${scratch}/std_pkg')`,
        `publish(r'${scratch}/std_pkg', r'${scratch}/registry')`,
      ].join("\n"),
    ],
    { encoding: "utf-8" },
  );
  if (seeded.status !== 0) {
    throw new Error(`registry seeding failed: ${seeded.stderr}`);
  }

  const portNumber = await freePort();
  service = spawn(PYTHON, ["-m", "protoml.cli", "serve"], {
    env: {
      ...process.env,
      PROTOML_ADDR: `127.0.0.1:${portNumber}`,
      PROTOML_WORKSPACE: join(scratch, "workspace"),
      PROTOML_REGISTRY: join(scratch, "registry"),
    },
    stdio: "ignore",
  });
  client = new ServiceClient(`http://127.0.0.1:${portNumber}`);

  const deadline = Date.now() + 30_000;
  for (;;) {
    try {
      const packages = await client.registryPackages();
      if (packages.some((p) => p.name === "std")) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) throw new Error("service did not come up");
    await new Promise((resolve) => setTimeout(resolve, 200));
  }

  const pkg = await client.registryPackage("std", "0.1.0");
  if (!pkg) throw new Error("std package missing from registry");
  stdComponents = Object.entries(pkg.documents)
    .filter(([path]) => path.startsWith("mutators/") || path.startsWith("blocks/"))
    .map(([, doc]) => doc as ComponentDoc);
  catalog = new ComponentCatalog(stdComponents);
}, 60_000);

afterAll(() => {
  service?.kill();
});

function buildActivationBlock(): BlockEditor {
  const editor = new BlockEditor(emptyBlock("demo/Act"), catalog);
  const relu = editor.addNode("std/relu", { x: 160, y: 120 });
  expect(relu.ok).toBe(true);
  expect(editor.connectPorts(port("Input"), port(relu.nodeId!)).ok).toBe(true);
  expect(editor.connectPorts(port(relu.nodeId!), port("Output")).ok).toBe(true);
  return editor;
}

const BOTTLENECK_PARAMS: ParamSpecDoc[] = [
  { name: "in_channels", type: "int", required: true, default: 64, min: 1 },
  { name: "mid_channels", type: "int", required: true, default: 64, min: 1 },
  { name: "out_channels", type: "int", required: true, default: 256, min: 1 },
  { name: "stride", type: "int", required: false, default: 2, min: 1 },
];

/** The residual bottleneck, built the way the canvas builds it. */
function buildBottleneckEditor(): { editor: BlockEditor; ids: Record<string, string> } {
  const editor = new BlockEditor(emptyBlock("demo/Bottleneck"), catalog);
  editor.setBlockParams(BOTTLENECK_PARAMS);
  editor.setInputPatterns([["N", "props.in_channels", 56, 56]]);

  const ids: Record<string, string> = {};
  const place = (key: string, ref: string, x: number, y: number) => {
    const outcome = editor.addNode(ref, { x, y });
    expect(outcome.ok).toBe(true);
    ids[key] = outcome.nodeId!;
  };
  place("conv1", "std/conv2d", 200, 80);
  place("bn1", "std/batch_norm2d", 200, 150);
  place("relu1", "std/relu", 200, 220);
  place("conv2", "std/conv2d", 200, 290);
  place("bn2", "std/batch_norm2d", 200, 360);
  place("relu2", "std/relu", 200, 430);
  place("conv3", "std/conv2d", 200, 500);
  place("bn3", "std/batch_norm2d", 200, 570);
  place("shortcut", "std/shortcut_projection", 420, 320);
  place("relu_out", "std/relu", 300, 650);

  const set = (key: string, name: string, value: string) => {
    const outcome = editor.editParameter(ids[key], name, value);
    expect(outcome.ok, `${key}.${name} <- ${value}`).toBe(true);
  };
  set("conv1", "in_channels", "${in_channels}");
  set("conv1", "out_channels", "${mid_channels}");
  set("conv1", "kernel_size", "1");
  set("conv1", "bias", "false");
  set("bn1", "num_features", "${mid_channels}");
  set("conv2", "in_channels", "${mid_channels}");
  set("conv2", "out_channels", "${mid_channels}");
  set("conv2", "kernel_size", "3");
  set("conv2", "stride", "${stride}");
  set("conv2", "padding", "1");
  set("conv2", "bias", "false");
  set("bn2", "num_features", "${mid_channels}");
  set("conv3", "in_channels", "${mid_channels}");
  set("conv3", "out_channels", "${out_channels}");
  set("conv3", "kernel_size", "1");
  set("conv3", "bias", "false");
  set("bn3", "num_features", "${out_channels}");
  set("shortcut", "in_channels", "${in_channels}");
  set("shortcut", "out_channels", "${out_channels}");
  set("shortcut", "stride", "${stride}");

  const wire = (from: string, to: string) => {
    const outcome = editor.connectPorts(port(ids[from] ?? from), port(ids[to] ?? to));
    expect(outcome.ok, `${from} -> ${to}`).toBe(true);
    return outcome;
  };
  wire("Input", "conv1");
  wire("conv1", "bn1");
  wire("bn1", "relu1");
  wire("relu1", "conv2");
  wire("conv2", "bn2");
  wire("bn2", "relu2");
  wire("relu2", "conv3");
  wire("conv3", "bn3");
  wire("Input", "shortcut");
  wire("bn3", "relu_out");
  const second = wire("shortcut", "relu_out");
  expect(second.needsJoinPolicy).toEqual({ node: ids.relu_out, port: 0, branch: undefined });
  editor.setJoinPolicy(ids.relu_out, 0, "add");
  wire("relu_out", "Output");
  return { editor, ids };
}

function documentsFor(editor: BlockEditor) {
  return buildDocumentSet("demo", editor.blockId, [...stdComponents, editor.serialize()]);
}

describe("UI round trip", () => {
  it("drag-drop activation block validates with zero errors", async () => {
    const editor = buildActivationBlock();
    const result = await client.validate(documentsFor(editor));
    expect(result.status).toBe(200);
    expect(result.report?.pass).toBe(true);
    const errors = result.report!.diagnostics.filter((d) => d.severity === "error");
    expect(errors).toEqual([]);
  });

  it("drag-drop bottleneck block validates with zero errors", async () => {
    const { editor } = buildBottleneckEditor();
    const result = await client.validate(documentsFor(editor));
    expect(result.status).toBe(200);
    const errors = result.report!.diagnostics.filter((d) => d.severity === "error");
    expect(errors).toEqual([]);
  });

  it("serialize -> validate -> reload yields the identical graph", async () => {
    const { editor } = buildBottleneckEditor();
    const serialized = editor.serialize();
    await client.validate(documentsFor(editor));
    const reloaded = new BlockEditor(serialized, catalog);
    const again = reloaded.serialize();
    expect(again).toEqual(serialized);
  });

  it("generates the activation block source through the service", async () => {
    const editor = buildActivationBlock();
    const result = await client.generate(documentsFor(editor));
    expect(result.status).toBe(200);
    const paths = result.files.map((f) => f.path).sort();
    expect(paths).toEqual(["__init__.py", "act.py"]);
    expect(result.files.find((f) => f.path === "act.py")!.content).toContain("nn.ReLU()");
  });
});

describe("injected errors anchor to the offending element", () => {
  it("a wiring cycle anchors GRAPH_CYCLE to a cycle member", async () => {
    const editor = buildActivationBlock();
    const extra = editor.addNode("std/relu", { x: 300, y: 120 }).nodeId!;
    const first = editor.node(editor.nodes[0].id)!.id;
    editor.connectPorts(port(first), port(extra));
    editor.connectPorts(port(extra), port(first)); // closes the loop
    const result = await client.validate(documentsFor(editor));
    expect(result.status).toBe(422);
    const anchored = anchorReport(result.report!.diagnostics, editor.serialize());
    const cycle = anchored.find((entry) => entry.diagnostic.code === "GRAPH_CYCLE");
    expect(cycle).toBeDefined();
    expect(cycle!.anchor).toEqual({ kind: "node", node: first });
    expect(allErrorsAnchored(anchored)).toBe(true);
  });

  it("a cleared required parameter anchors PARAM_MISSING to the field", async () => {
    const { editor, ids } = buildBottleneckEditor();
    editor.editParameter(ids.conv1, "in_channels", "");
    const result = await client.validate(documentsFor(editor));
    expect(result.status).toBe(422);
    const anchored = anchorReport(result.report!.diagnostics, editor.serialize());
    const missing = anchored.find((entry) => entry.diagnostic.code === "PARAM_MISSING");
    expect(missing).toBeDefined();
    expect(missing!.anchor).toEqual({
      kind: "param",
      node: ids.conv1,
      param: "in_channels",
    });
    expect(allErrorsAnchored(anchored)).toBe(true);
  });

  it("a stride mismatch anchors SHAPE_MISMATCH to the join port", async () => {
    const { editor, ids } = buildBottleneckEditor();
    editor.editParameter(ids.conv2, "stride", "1"); // skip path still strides by 2
    const result = await client.validate(documentsFor(editor));
    expect(result.status).toBe(422);
    const anchored = anchorReport(result.report!.diagnostics, editor.serialize());
    const mismatch = anchored.find((entry) => entry.diagnostic.code === "SHAPE_MISMATCH");
    expect(mismatch).toBeDefined();
    expect(mismatch!.anchor).toEqual({ kind: "port", node: ids.relu_out, port: 0 });
    expect(allErrorsAnchored(anchored)).toBe(true);
  });
});
