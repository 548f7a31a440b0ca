/** Package generated sources as a zip for download.
 *
 * The zip library is injected: the browser build loads the JSZip UMD
 * bundle, tests import the package directly.
 */

import { GeneratedFileDoc } from "./documents.js";

export interface ZipLike {
  file(name: string, content: string): unknown;
  generateAsync(options: { type: "blob" | "uint8array" }): Promise<unknown>;
}

export type ZipFactory = new () => ZipLike;

export async function buildZip(
  files: GeneratedFileDoc[],
  Zip: ZipFactory,
  type: "blob" | "uint8array" = "blob",
): Promise<unknown> {
  const zip = new Zip();
  for (const file of [...files].sort((a, b) => a.path.localeCompare(b.path))) {
    zip.file(file.path, file.content);
  }
  return zip.generateAsync({ type });
}

/** Trigger a browser download of the zipped sources. */
export async function downloadGeneratedZip(
  files: GeneratedFileDoc[],
  projectName: string,
  Zip: ZipFactory,
): Promise<void> {
  const blob = (await buildZip(files, Zip, "blob")) as Blob;
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = `${projectName}-generated.zip`;
  anchor.click();
  URL.revokeObjectURL(url);
}
