export * as topic from "./topic";
export * as frames from "./frames";
export * as ofcodec from "./ofcodec";
export { BusSession, DEFAULT_BUS_ADDR, BUS_ADDR_ENV, defaultBusAddr, parseAddr } from "./session";
export { MacTable, learningStep, FLOW_PRIORITY, FLOW_IDLE_TIMEOUT, MAC_AGE_OUT_S } from "./learning-switch";
