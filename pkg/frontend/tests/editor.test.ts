import { describe, expect, it } from "vitest";

import { BlockDoc, MutatorDoc } from "../src/documents.js";
import { BlockEditor, ComponentCatalog, convertBinding, emptyBlock, port } from "../src/editor.js";

function mutatorDoc(id: string, inputs = 1, outputs = 1, params: MutatorDoc["params"] = []): MutatorDoc {
  return {
    format_version: 1,
    kind: "mutator",
    id,
    imports: [],
    input_count: inputs,
    output_count: outputs,
    input_patterns: null,
    output_exprs: null,
    params,
    init_code: "self.${name} = nn.Identity()",
    forward_code: "${output} = self.${name}(${input})",
    extra_code: null,
  };
}

function blockDoc(id: string, nodes: BlockDoc["nodes"] = []): BlockDoc {
  return { ...emptyBlock(id), nodes };
}

function catalogWith(...components: (MutatorDoc | BlockDoc)[]): ComponentCatalog {
  return new ComponentCatalog(components);
}

const CONV_PARAMS: MutatorDoc["params"] = [
  { name: "in_channels", type: "int", required: true, min: 1 },
  { name: "out_channels", type: "int", required: true, min: 1 },
  { name: "stride", type: "int", required: false, default: 1, min: 1 },
];

describe("palette drop", () => {
  it("appends a node with defaulted parameters and a layout hint", () => {
    const editor = new BlockEditor(emptyBlock("demo/B"), catalogWith(mutatorDoc("std/conv", 1, 1, CONV_PARAMS)));
    const outcome = editor.addNode("std/conv", { x: 120, y: 80 });
    expect(outcome.ok).toBe(true);
    const node = editor.node(outcome.nodeId!)!;
    expect(node.params).toEqual({ stride: 1 }); // only defaults are prefilled
    expect(editor.positionOf(node.id)).toEqual({ x: 120, y: 80 });
    const doc = editor.serialize();
    expect(doc.layout?.[node.id]).toEqual({ x: 120, y: 80 });
  });

  it("rejects unknown components", () => {
    const editor = new BlockEditor(emptyBlock("demo/B"), catalogWith());
    expect(editor.addNode("std/ghost", { x: 0, y: 0 }).ok).toBe(false);
  });

  it("blocks dropping a block into itself, directly and transitively", () => {
    const inner = blockDoc("demo/Inner", [
      { id: "child", ref: "demo/Outer", params: {}, repeat: 1, kind: "normal" },
    ]);
    const catalog = catalogWith(blockDoc("demo/Outer"), inner);
    const editor = new BlockEditor(blockDoc("demo/Outer"), catalog);
    const direct = editor.addNode("demo/Outer", { x: 0, y: 0 });
    expect(direct.ok).toBe(false);
    expect(direct.reason).toMatch(/itself/);
    const transitive = editor.addNode("demo/Inner", { x: 0, y: 0 });
    expect(transitive.ok).toBe(false);
  });
});

describe("connect ports", () => {
  function twoNodeEditor() {
    const catalog = catalogWith(mutatorDoc("std/relu"));
    const editor = new BlockEditor(emptyBlock("demo/B"), catalog);
    const a = editor.addNode("std/relu", { x: 0, y: 0 }).nodeId!;
    const b = editor.addNode("std/relu", { x: 0, y: 100 }).nodeId!;
    return { editor, a, b };
  }

  it("adds edges between valid ports", () => {
    const { editor, a, b } = twoNodeEditor();
    expect(editor.connectPorts(port("Input"), port(a)).ok).toBe(true);
    expect(editor.connectPorts(port(a), port(b)).ok).toBe(true);
    expect(editor.connectPorts(port(b), port("Output")).ok).toBe(true);
    expect(editor.edges).toHaveLength(3);
  });

  it("rejects output-to-output inline", () => {
    const { editor, a } = twoNodeEditor();
    const outcome = editor.connectPorts(port(a), port("Input"));
    expect(outcome.ok).toBe(false);
    expect(outcome.reason).toMatch(/input port/);
    expect(editor.edges).toHaveLength(0);
  });

  it("rejects out-of-range ports", () => {
    const { editor, a, b } = twoNodeEditor();
    expect(editor.connectPorts({ node: a, port: 3 }, port(b)).ok).toBe(false);
  });

  it("signals the join picker on fan-in > 1 and records the policy", () => {
    const { editor, a, b } = twoNodeEditor();
    editor.connectPorts(port("Input"), port(a));
    editor.connectPorts(port("Input"), port(b));
    const second = editor.connectPorts(port(a), port(b));
    expect(second.needsJoinPolicy).toEqual({ node: b, port: 0, branch: undefined });
    editor.setJoinPolicy(b, 0, "concat", 1);
    expect(editor.joinFor(b, 0)).toEqual({ node: b, port: 0, op: "concat", concat_axis: 1 });
  });

  it("requires a branch side into conditional nodes", () => {
    const catalog = catalogWith(mutatorDoc("std/relu"));
    const editor = new BlockEditor(emptyBlock("demo/B"), catalog);
    const cond = editor.addNode("std/relu", { x: 0, y: 0 }, { conditional: true }).nodeId!;
    expect(editor.connectPorts(port("Input"), port(cond)).ok).toBe(false);
    expect(editor.connectPorts(port("Input"), port(cond), "true_side").ok).toBe(true);
    expect(editor.connectPorts(port("Input"), port(cond), "false_side").ok).toBe(true);
  });
});

describe("parameter editing", () => {
  function editorWithConv() {
    const editor = new BlockEditor(
      { ...emptyBlock("demo/B"), params: [{ name: "width", type: "int", required: true }] },
      catalogWith(mutatorDoc("std/conv", 1, 1, CONV_PARAMS)),
    );
    const id = editor.addNode("std/conv", { x: 0, y: 0 }).nodeId!;
    return { editor, id };
  }

  it("converts raw text by the declared type", () => {
    const { editor, id } = editorWithConv();
    expect(editor.editParameter(id, "in_channels", "64").ok).toBe(true);
    expect(editor.node(id)!.params.in_channels).toBe(64);
  });

  it("holds invalid text out of the document", () => {
    const { editor, id } = editorWithConv();
    const before = JSON.stringify(editor.serialize());
    const outcome = editor.editParameter(id, "in_channels", "sixty-four");
    expect(outcome.ok).toBe(false);
    expect(JSON.stringify(editor.serialize())).toBe(before);
  });

  it("accepts block-parameter expressions verbatim", () => {
    const { editor, id } = editorWithConv();
    expect(editor.editParameter(id, "in_channels", "${width}").ok).toBe(true);
    expect(editor.node(id)!.params.in_channels).toBe("${width}");
  });

  it("clears a binding on empty text", () => {
    const { editor, id } = editorWithConv();
    editor.editParameter(id, "in_channels", "64");
    editor.editParameter(id, "in_channels", "");
    expect(editor.node(id)!.params.in_channels).toBeUndefined();
  });

  it("sets repeat to a count or a parameter reference", () => {
    const { editor, id } = editorWithConv();
    expect(editor.setRepeat(id, "4").ok).toBe(true);
    expect(editor.node(id)!.repeat).toBe(4);
    expect(editor.setRepeat(id, "${width}").ok).toBe(true);
    expect(editor.node(id)!.repeat).toBe("${width}");
    expect(editor.setRepeat(id, "0").ok).toBe(false);
    expect(editor.setRepeat(id, "many").ok).toBe(false);
  });
});

describe("binding conversion", () => {
  it("handles every declared type", () => {
    expect(convertBinding("3", { name: "k", type: "int", required: true })).toBe(3);
    expect(convertBinding("3.5", { name: "k", type: "float", required: true })).toBe(3.5);
    expect(convertBinding("true", { name: "k", type: "bool", required: true })).toBe(true);
    expect(convertBinding("same", { name: "k", type: "string", required: true })).toBe("same");
    expect(convertBinding("1, 2, 3", { name: "k", type: "int_list", required: true })).toEqual([1, 2, 3]);
    expect(convertBinding("[2, 4]", { name: "k", type: "shape", required: true })).toEqual([2, 4]);
    expect(convertBinding("x", { name: "k", type: "int", required: true })).toBeUndefined();
  });
});

describe("undo/redo", () => {
  it("undo composed with do is the identity on the serialized document", () => {
    const catalog = catalogWith(mutatorDoc("std/relu"));
    const editor = new BlockEditor(emptyBlock("demo/B"), catalog);
    editor.addNode("std/relu", { x: 10, y: 10 });
    const before = JSON.stringify(editor.serialize());
    editor.addNode("std/relu", { x: 50, y: 50 });
    editor.undo();
    expect(JSON.stringify(editor.serialize())).toBe(before);
    editor.redo();
    editor.undo();
    expect(JSON.stringify(editor.serialize())).toBe(before);
  });

  it("supports at least 50 undo steps", () => {
    const catalog = catalogWith(mutatorDoc("std/relu"));
    const editor = new BlockEditor(emptyBlock("demo/B"), catalog);
    const snapshots: string[] = [];
    for (let i = 0; i < 60; i += 1) {
      snapshots.push(JSON.stringify(editor.serialize()));
      editor.addNode("std/relu", { x: i, y: i });
    }
    let undone = 0;
    while (undone < 50 && editor.undo()) undone += 1;
    expect(undone).toBe(50);
    expect(JSON.stringify(editor.serialize())).toBe(snapshots[10]);
  });

  it("layout-only moves are not undo steps", () => {
    const catalog = catalogWith(mutatorDoc("std/relu"));
    const editor = new BlockEditor(emptyBlock("demo/B"), catalog);
    const id = editor.addNode("std/relu", { x: 0, y: 0 }).nodeId!;
    const depth = editor.undoDepth;
    editor.moveNode(id, { x: 99, y: 99 });
    expect(editor.undoDepth).toBe(depth);
    expect(editor.serialize().layout?.[id]).toEqual({ x: 99, y: 99 });
  });
});

describe("serialization", () => {
  it("always produces a schema-shaped block document", () => {
    const catalog = catalogWith(mutatorDoc("std/relu"));
    const editor = new BlockEditor(emptyBlock("demo/B"), catalog);
    const id = editor.addNode("std/relu", { x: 5, y: 6 }).nodeId!;
    editor.connectPorts(port("Input"), port(id));
    editor.connectPorts(port(id), port("Output"));
    const doc = editor.serialize();
    expect(doc.format_version).toBe(1);
    expect(doc.kind).toBe("block");
    expect(doc.nodes).toHaveLength(1);
    expect(doc.edges).toEqual([
      { from: ["Input", 0], to: [id, 0] },
      { from: [id, 0], to: ["Output", 0] },
    ]);
    expect(doc.layout).toEqual({ [id]: { x: 5, y: 6 } });
  });
});
