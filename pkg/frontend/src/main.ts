import { mountApp } from "./app.js";

const root = document.getElementById("app");
if (root === null) throw new Error("missing #app mount point");
mountApp(root, (input, init) => fetch(input, init));
