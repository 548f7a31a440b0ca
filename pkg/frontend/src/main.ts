import { EditorApp } from "./app.js";
import { ServiceClient } from "./client.js";
import { ZipFactory } from "./download.js";

declare global {
  interface Window {
    JSZip?: ZipFactory;
  }
}

const params = new URLSearchParams(window.location.search);
const serviceUrl = params.get("service") ?? "http://127.0.0.1:8799";
const projectId = params.get("project") ?? "untitled";

const root = document.querySelector<HTMLElement>("#app");
if (!root) {
  throw new Error("missing #app container");
}

const app = new EditorApp(root, new ServiceClient(serviceUrl), window.JSZip);
void app.open(projectId);
