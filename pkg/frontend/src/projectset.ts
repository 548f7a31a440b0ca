/** Assemble the wire-form document set the service consumes. */

import {
  BlockDoc,
  ComponentDoc,
  DocumentSet,
  FORMAT_VERSION,
  ProjectManifestDoc,
  componentFilename,
} from "./documents.js";

export function buildDocumentSet(
  projectName: string,
  entryBlock: string | null,
  components: Iterable<ComponentDoc>,
  requires: Record<string, string> = {},
): DocumentSet {
  const manifest: ProjectManifestDoc = {
    format_version: FORMAT_VERSION,
    name: projectName,
    entry_block: entryBlock,
    requires,
  };
  const documents: DocumentSet = { "project.json": manifest };
  for (const component of components) {
    const dir = component.kind === "mutator" ? "mutators" : "blocks";
    documents[`${dir}/${componentFilename(component.id)}`] = component;
  }
  return documents;
}

/** Pull the component documents back out of a fetched document set. */
export function componentsOf(documents: DocumentSet): ComponentDoc[] {
  const found: ComponentDoc[] = [];
  for (const [path, doc] of Object.entries(documents)) {
    const parts = path.split("/");
    const leaf = parts[parts.length - 2];
    if (
      (parts.length === 2 && (parts[0] === "mutators" || parts[0] === "blocks")) ||
      (parts.length === 5 && parts[0] === "packages" && (leaf === "mutators" || leaf === "blocks"))
    ) {
      found.push(doc as ComponentDoc);
    }
  }
  return found.sort((a, b) => a.id.localeCompare(b.id));
}

export function manifestOf(documents: DocumentSet): ProjectManifestDoc | null {
  const manifest = documents["project.json"];
  return manifest ? (manifest as ProjectManifestDoc) : null;
}

export function entryBlockOf(documents: DocumentSet): BlockDoc | null {
  const manifest = manifestOf(documents);
  if (!manifest?.entry_block) return null;
  const match = componentsOf(documents).find(
    (c) => c.kind === "block" && c.id === manifest.entry_block,
  );
  return (match as BlockDoc) ?? null;
}
