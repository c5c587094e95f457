// One controllet's connection to the broker.

import * as net from "node:net";
import { EventEmitter } from "node:events";
import {
    Frame,
    FrameReader,
    FrameType,
    encodeFrame,
    packPublish,
    packRegister,
    packReply,
    parseEvent,
    parseRegisterAck,
    parseRequest,
} from "./frames";
import { Pattern } from "./topic";

export const DEFAULT_BUS_ADDR = "127.0.0.1:7633";
export const BUS_ADDR_ENV = "ZSDN_BUS_ADDR";
export const HEARTBEAT_INTERVAL_MS = 2000;

export function defaultBusAddr(): string {
    return process.env[BUS_ADDR_ENV] || DEFAULT_BUS_ADDR;
}

export function parseAddr(addr: string): { host: string; port: number } {
    const at = addr.lastIndexOf(":");
    if (at < 0) throw new Error(`bus address must be host:port, got "${addr}"`);
    const port = Number(addr.slice(at + 1));
    if (!Number.isInteger(port) || port < 1 || port > 65535) {
        throw new Error(`bad port in bus address "${addr}"`);
    }
    return { host: addr.slice(0, at) || "127.0.0.1", port };
}

export type RequestHandler = (payload: Buffer) => [number, Buffer];

/**
 * Events:
 *   "event"  (topic: Buffer, payload: Buffer)  - a routed publication
 *   "close"  ()                                - connection gone for any reason
 */
export class BusSession extends EventEmitter {
    onRequest: RequestHandler = () => [1, Buffer.alloc(0)];

    private sock: net.Socket | null = null;
    private reader = new FrameReader();
    private heartbeat: NodeJS.Timeout | null = null;
    private ackWaiter: ((frame: Frame) => void) | null = null;
    private closed = false;

    constructor(private readonly address: string = defaultBusAddr()) {
        super();
    }

    connect(): Promise<void> {
        const { host, port } = parseAddr(this.address);
        return new Promise((resolve, reject) => {
            const sock = net.connect(port, host);
            sock.once("connect", () => {
                sock.setNoDelay(true);
                this.sock = sock;
                sock.on("data", (chunk) => this.onData(chunk));
                sock.on("error", () => this.teardown());
                sock.on("close", () => this.teardown());
                resolve();
            });
            sock.once("error", (err) => {
                if (this.sock === null) reject(err);
            });
        });
    }

    register(
        controlletType: number,
        instanceId: bigint,
        toPatterns: Pattern[] = [],
        fromTopics: Buffer[] = [],
    ): Promise<bigint> {
        return new Promise((resolve, reject) => {
            this.ackWaiter = (frame) => {
                this.ackWaiter = null;
                const ack = parseRegisterAck(frame.body);
                if (ack.status !== 0) {
                    reject(new Error(`registration refused with status ${ack.status}`));
                    return;
                }
                this.heartbeat = setInterval(
                    () => this.send(encodeFrame(FrameType.HEARTBEAT)),
                    HEARTBEAT_INTERVAL_MS,
                );
                this.heartbeat.unref();
                resolve(ack.instanceId);
            };
            this.send(encodeFrame(
                FrameType.REGISTER,
                packRegister(controlletType, instanceId, toPatterns, fromTopics),
            ));
        });
    }

    publish(topic: Buffer, payload: Buffer): void {
        this.send(encodeFrame(FrameType.PUBLISH, packPublish(topic, payload)));
    }

    close(): void {
        if (this.sock && !this.closed) {
            try {
                this.sock.write(encodeFrame(FrameType.BYE));
            } catch {
                // already torn down; nothing to say goodbye to
            }
            this.sock.end();
        }
        this.teardown();
    }

    private send(data: Buffer): void {
        if (!this.sock || this.closed) throw new Error("session is closed");
        this.sock.write(data);
    }

    private onData(chunk: Buffer): void {
        let frames: Frame[];
        try {
            frames = this.reader.feed(chunk);
        } catch (err) {
            console.error(`[bus] protocol error: ${err}`);
            this.teardown();
            return;
        }
        for (const frame of frames) this.dispatch(frame);
    }

    private dispatch(frame: Frame): void {
        switch (frame.frameType) {
            case FrameType.REGISTER_ACK:
                this.ackWaiter?.(frame);
                break;
            case FrameType.EVENT: {
                const { topic, payload } = parseEvent(frame.body);
                this.emit("event", topic, payload);
                break;
            }
            case FrameType.REQUEST: {
                const { reqId, payload } = parseRequest(frame.body);
                const [status, reply] = this.onRequest(payload);
                this.send(encodeFrame(FrameType.REPLY, packReply(reqId, status, reply)));
                break;
            }
            case FrameType.HEARTBEAT:
                break;
            default:
                break; // broker never sends anything else to a controllet
        }
    }

    private teardown(): void {
        if (this.closed) return;
        this.closed = true;
        if (this.heartbeat) clearInterval(this.heartbeat);
        this.sock?.destroy();
        this.emit("close");
    }
}
