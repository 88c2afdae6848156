import { createApp } from "./app";

const app = createApp(document);
void app.refreshHealth();
