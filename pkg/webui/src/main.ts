import { ApiClient } from "./api.js";
import { ReviewApp } from "./app.js";

new ReviewApp(document, new ApiClient("")).start();
