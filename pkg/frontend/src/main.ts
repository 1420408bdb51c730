import { ReviewApi } from "./api.js";
import { ReviewConsole } from "./app.js";

const root = document.getElementById("app");
if (root) {
  // same-origin by default: the service process serves this bundle
  const baseUrl = root.dataset.baseUrl ?? "";
  const api = new ReviewApi(baseUrl);
  const console_ = new ReviewConsole(root, api, window.localStorage);
  void console_.loadNext();
}
