// Topic construction and subscription patterns.
//
// Topics are hierarchical byte strings; a subscription pattern is a byte
// prefix plus a wildcard mask (one bit per pattern byte, MSB first within
// each mask byte; a set bit means the byte must match literally).

export const TO = 0x01;
export const FROM = 0x02;

export const SWITCH_ADAPTER = 0x0000;
export const LEARNING_SWITCH = 0x0001;
export const TOPOLOGY = 0x0002;
export const KERNEL = 0xffff;

export const OPENFLOW = 0x00;
export const PACKET_IN = 0x0a;
export const PORT_STATUS = 0x0c;
export const PACKET_OUT = 0x0d;
export const FLOW_MOD = 0x0e;

export const ETH_IPV4 = 0x0800;
export const ETH_ARP = 0x0806;

export const MAX_TOPIC_LEN = 64;

export interface Pattern {
    bytes: Buffer;
    mask: Buffer;
}

function allLiteralMask(n: number): Buffer {
    const mask = Buffer.alloc(Math.ceil(n / 8));
    for (let i = 0; i < n; i++) {
        mask[i >> 3] |= 0x80 >> (i & 7);
    }
    return mask;
}

export function literal(bytes: Buffer): Pattern {
    if (bytes.length < 1 || bytes.length > MAX_TOPIC_LEN) {
        throw new Error(`pattern length must be 1..${MAX_TOPIC_LEN}, got ${bytes.length}`);
    }
    return { bytes, mask: allLiteralMask(bytes.length) };
}

export function withWildcards(bytes: Buffer, wildcardIndexes: number[]): Pattern {
    const pattern = literal(bytes);
    for (const i of wildcardIndexes) {
        if (i < 0 || i >= bytes.length) {
            throw new Error(`wildcard index ${i} out of range`);
        }
        pattern.mask[i >> 3] &= ~(0x80 >> (i & 7));
    }
    return pattern;
}

export function matches(pattern: Pattern, topic: Buffer): boolean {
    if (pattern.bytes.length > topic.length) return false;
    for (let i = 0; i < pattern.bytes.length; i++) {
        const isLiteral = (pattern.mask[i >> 3] >> (7 - (i & 7))) & 1;
        if (isLiteral && pattern.bytes[i] !== topic[i]) return false;
    }
    return true;
}

/** Topic a switch adapter listens on for one OpenFlow message type. */
export function toSwitchTopic(dpid: bigint, ofMsgType: number): Buffer {
    const topic = Buffer.alloc(13);
    topic[0] = TO;
    topic.writeUInt16BE(SWITCH_ADAPTER, 1);
    topic.writeBigUInt64BE(dpid, 3);
    topic[11] = OPENFLOW;
    topic[12] = ofMsgType;
    return topic;
}

/** Full PACKET_IN topic as published by a switch adapter. */
export function packetInTopic(lbGroup: number, ethertype: number, ipProto?: number): Buffer {
    const head = Buffer.from([FROM, 0x00, 0x00, OPENFLOW, PACKET_IN, lbGroup]);
    const eth = Buffer.alloc(2);
    eth.writeUInt16BE(ethertype, 0);
    const parts = [head, eth];
    if (ethertype === ETH_IPV4) {
        if (ipProto === undefined) throw new Error("IPv4 topics carry an ip_proto byte");
        parts.push(Buffer.from([ipProto]));
    } else if (ipProto !== undefined) {
        throw new Error("only IPv4 topics carry an ip_proto byte");
    }
    return Buffer.concat(parts);
}

/**
 * Subscriptions for the ethertypes the learning switch handles (ARP, IPv4).
 * lbGroup null wildcards the group byte so one replica sees every shard.
 */
export function packetInPatterns(lbGroup: number | null): Pattern[] {
    const patterns: Pattern[] = [];
    for (const ethertype of [ETH_ARP, ETH_IPV4]) {
        const base = Buffer.alloc(8);
        base[0] = FROM;
        base.writeUInt16BE(0x0000, 1);
        base[3] = OPENFLOW;
        base[4] = PACKET_IN;
        base[5] = lbGroup ?? 0x00;
        base.writeUInt16BE(ethertype, 6);
        patterns.push(lbGroup === null ? withWildcards(base, [5]) : literal(base));
    }
    return patterns;
}
