// Bus wire format: u32 big-endian length (type byte + body), then the frame.

import { Pattern } from "./topic";

export enum FrameType {
    REGISTER = 0x01,
    REGISTER_ACK = 0x02,
    SUBSCRIBE = 0x03,
    UNSUBSCRIBE = 0x04,
    PUBLISH = 0x05,
    EVENT = 0x06,
    REQUEST = 0x07,
    REPLY = 0x08,
    HEARTBEAT = 0x09,
    BYE = 0x0a,
}

export const MAX_BODY = 1 << 20;

export interface Frame {
    frameType: number;
    body: Buffer;
}

export function encodeFrame(frameType: number, body: Buffer = Buffer.alloc(0)): Buffer {
    if (body.length > MAX_BODY) {
        throw new Error(`body of ${body.length} bytes exceeds ${MAX_BODY}`);
    }
    const out = Buffer.alloc(5 + body.length);
    out.writeUInt32BE(1 + body.length, 0);
    out[4] = frameType;
    body.copy(out, 5);
    return out;
}

/** Incremental frame splitter for a socket's chunk stream. */
export class FrameReader {
    private buf: Buffer = Buffer.alloc(0);

    feed(chunk: Buffer): Frame[] {
        this.buf = this.buf.length === 0 ? chunk : Buffer.concat([this.buf, chunk]);
        const frames: Frame[] = [];
        while (this.buf.length >= 4) {
            const length = this.buf.readUInt32BE(0);
            if (length < 1 || length > 1 + MAX_BODY) {
                throw new Error(`bad frame length ${length}`);
            }
            if (this.buf.length < 4 + length) break;
            frames.push({
                frameType: this.buf[4],
                body: this.buf.subarray(5, 4 + length),
            });
            this.buf = this.buf.subarray(4 + length);
        }
        return frames;
    }
}

function packPattern(pattern: Pattern): Buffer {
    const head = Buffer.alloc(2);
    head.writeUInt16BE(pattern.bytes.length, 0);
    return Buffer.concat([head, pattern.bytes, pattern.mask]);
}

export function packRegister(
    controlletType: number,
    instanceId: bigint,
    toPatterns: Pattern[] = [],
    fromTopics: Buffer[] = [],
): Buffer {
    const fixed = Buffer.alloc(12);
    fixed.writeUInt16BE(controlletType, 0);
    fixed.writeBigUInt64BE(instanceId, 2);
    fixed.writeUInt16BE(toPatterns.length, 10);
    const parts: Buffer[] = [fixed, ...toPatterns.map(packPattern)];
    const count = Buffer.alloc(2);
    count.writeUInt16BE(fromTopics.length, 0);
    parts.push(count);
    for (const topic of fromTopics) {
        const len = Buffer.alloc(2);
        len.writeUInt16BE(topic.length, 0);
        parts.push(len, topic);
    }
    return Buffer.concat(parts);
}

export function parseRegisterAck(body: Buffer): { status: number; instanceId: bigint } {
    if (body.length !== 9) throw new Error(`register ack must be 9 bytes, got ${body.length}`);
    return { status: body[0], instanceId: body.readBigUInt64BE(1) };
}

export function packPublish(topic: Buffer, payload: Buffer): Buffer {
    const head = Buffer.alloc(2);
    head.writeUInt16BE(topic.length, 0);
    return Buffer.concat([head, topic, payload]);
}

/** EVENT bodies share the PUBLISH layout: u16 topic length, topic, payload. */
export function parseEvent(body: Buffer): { topic: Buffer; payload: Buffer } {
    if (body.length < 2) throw new Error("truncated event");
    const n = body.readUInt16BE(0);
    if (2 + n > body.length) throw new Error("event topic extends past body");
    return { topic: body.subarray(2, 2 + n), payload: body.subarray(2 + n) };
}

export function parseRequest(body: Buffer): { targetId: bigint; reqId: number; payload: Buffer } {
    if (body.length < 12) throw new Error("truncated request");
    return {
        targetId: body.readBigUInt64BE(0),
        reqId: body.readUInt32BE(8),
        payload: body.subarray(12),
    };
}

export function packRequest(targetId: bigint, reqId: number, payload: Buffer): Buffer {
    const head = Buffer.alloc(12);
    head.writeBigUInt64BE(targetId, 0);
    head.writeUInt32BE(reqId, 8);
    return Buffer.concat([head, payload]);
}

export function packReply(reqId: number, status: number, payload: Buffer): Buffer {
    const head = Buffer.alloc(5);
    head.writeUInt32BE(reqId, 0);
    head[4] = status;
    return Buffer.concat([head, payload]);
}

export function parseReply(body: Buffer): { reqId: number; status: number; payload: Buffer } {
    if (body.length < 5) throw new Error("truncated reply");
    return { reqId: body.readUInt32BE(0), status: body[4], payload: body.subarray(5) };
}
