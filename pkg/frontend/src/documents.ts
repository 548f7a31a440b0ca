/** Document shapes shared with the service (the on-disk schemas, verbatim). */

export const FORMAT_VERSION = 1;

export type BindingValue = number | boolean | string | number[];

export interface ParamSpecDoc {
  name: string;
  type: "int" | "float" | "string" | "bool" | "int_list" | "shape";
  required: boolean;
  default?: BindingValue;
  min?: number;
  max?: number;
  choices?: BindingValue[];
  shape_pattern?: (number | string)[];
}

export interface NodeDoc {
  id: string;
  ref: string;
  ref_version?: string;
  params: Record<string, BindingValue>;
  repeat: number | string;
  kind: "normal" | "conditional";
  condition?: string;
}

export type PortEnd = [node: string, port: number];
export type BranchSide = "true_side" | "false_side";

export interface EdgeDoc {
  from: PortEnd;
  to: PortEnd;
  branch?: BranchSide;
}

export interface JoinDoc {
  node: string;
  port: number;
  op: "add" | "concat" | "multiply";
  concat_axis?: number;
  branch?: BranchSide;
}

export interface LocalVarDoc {
  name: string;
  expr: BindingValue;
}

export interface BlockDoc {
  format_version: number;
  kind: "block";
  id: string;
  input_count: number;
  output_count: number;
  input_patterns: (number | string)[][] | null;
  output_exprs: (string | string[])[] | null;
  params: ParamSpecDoc[];
  local_vars: LocalVarDoc[];
  nodes: NodeDoc[];
  edges: EdgeDoc[];
  joins: JoinDoc[];
  layout?: Record<string, unknown>;
}

export interface MutatorDoc {
  format_version: number;
  kind: "mutator";
  id: string;
  imports: string[];
  input_count: number;
  output_count: number;
  input_patterns: (number | string)[][] | null;
  output_exprs: (string | string[])[] | null;
  params: ParamSpecDoc[];
  init_code: string;
  forward_code: string;
  extra_code: string | null;
}

export type ComponentDoc = MutatorDoc | BlockDoc;

export interface ProjectManifestDoc {
  format_version: number;
  name: string;
  entry_block: string | null;
  requires: Record<string, string>;
}

/** path -> document map, the wire form of a whole project. */
export type DocumentSet = Record<string, unknown>;

export interface DiagnosticDoc {
  severity: "error" | "warning";
  code: string;
  message: string;
  block?: string;
  node?: string;
  port?: number;
  param?: string;
  path?: string;
}

export interface ReportDoc {
  pass: boolean;
  diagnostics: DiagnosticDoc[];
  shapes: Record<string, (number | null)[][] | null[]>;
}

export interface GeneratedFileDoc {
  path: string;
  content: string;
}

export interface Envelope<P> {
  request_id: string;
  payload?: P;
  error?: { code: string; message: string; location?: string };
}

export const INPUT_NODE = "Input";
export const OUTPUT_NODE = "Output";

export function componentName(componentId: string): string {
  const slash = componentId.indexOf("/");
  return slash < 0 ? componentId : componentId.slice(slash + 1);
}

export function componentNamespace(componentId: string): string {
  const slash = componentId.indexOf("/");
  return slash < 0 ? "" : componentId.slice(0, slash);
}

export function componentFilename(componentId: string): string {
  return `${componentNamespace(componentId)}__${componentName(componentId)}.json`;
}
