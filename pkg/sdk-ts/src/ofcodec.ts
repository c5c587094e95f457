// The OpenFlow 1.0 subset a learning switch needs: decode PACKET_IN,
// encode PACKET_OUT and FLOW_MOD.  All integers are big-endian.

export const OF_VERSION = 0x01;

export const OFPT_PACKET_IN = 10;
export const OFPT_PACKET_OUT = 13;
export const OFPT_FLOW_MOD = 14;

export const OFPP_FLOOD = 0xfffb;
export const OFPP_NONE = 0xffff;
export const NO_BUFFER = 0xffffffff;

export const OFPFC_ADD = 0;
export const OFPR_NO_MATCH = 0;

export const OFPFW_ALL = (1 << 22) - 1;
export const OFPFW_DL_DST = 1 << 3;

const HEADER_LEN = 8;
const MATCH_LEN = 40;

export interface PacketIn {
    xid: number;
    bufferId: number;
    totalLen: number;
    inPort: number;
    reason: number;
    frame: Buffer;
}

function header(msgType: number, xid: number, bodyLen: number): Buffer {
    const head = Buffer.alloc(HEADER_LEN);
    head[0] = OF_VERSION;
    head[1] = msgType;
    head.writeUInt16BE(HEADER_LEN + bodyLen, 2);
    head.writeUInt32BE(xid >>> 0, 4);
    return head;
}

export function decodePacketIn(buf: Buffer): PacketIn {
    if (buf.length < HEADER_LEN + 10) throw new Error(`packet-in too short: ${buf.length}`);
    if (buf[0] !== OF_VERSION) throw new Error(`unsupported OpenFlow version 0x${buf[0].toString(16)}`);
    if (buf[1] !== OFPT_PACKET_IN) throw new Error(`not a packet-in: type ${buf[1]}`);
    if (buf.readUInt16BE(2) !== buf.length) throw new Error("length field does not match buffer");
    return {
        xid: buf.readUInt32BE(4),
        bufferId: buf.readUInt32BE(8),
        totalLen: buf.readUInt16BE(12),
        inPort: buf.readUInt16BE(14),
        reason: buf[16],
        frame: buf.subarray(18),
    };
}

function packOutput(port: number, maxLen = 0): Buffer {
    const action = Buffer.alloc(8);
    action.writeUInt16BE(0, 0); // OFPAT_OUTPUT
    action.writeUInt16BE(8, 2);
    action.writeUInt16BE(port, 4);
    action.writeUInt16BE(maxLen, 6);
    return action;
}

export interface PacketOutFields {
    xid?: number;
    bufferId: number;
    inPort: number;
    outputPorts: number[];
    frame: Buffer;
}

export function encodePacketOut(fields: PacketOutFields): Buffer {
    const actions = Buffer.concat(fields.outputPorts.map((p) => packOutput(p)));
    const fixed = Buffer.alloc(8);
    fixed.writeUInt32BE(fields.bufferId >>> 0, 0);
    fixed.writeUInt16BE(fields.inPort, 4);
    fixed.writeUInt16BE(actions.length, 6);
    const body = Buffer.concat([fixed, actions, fields.frame]);
    return Buffer.concat([header(OFPT_PACKET_OUT, fields.xid ?? 0, body.length), body]);
}

/** ofp_match with every field wildcarded except dl_dst. */
export function matchExactDlDst(dlDst: Buffer): Buffer {
    if (dlDst.length !== 6) throw new Error("dl_dst must be 6 bytes");
    const match = Buffer.alloc(MATCH_LEN);
    match.writeUInt32BE(OFPFW_ALL & ~OFPFW_DL_DST, 0);
    dlDst.copy(match, 12); // after wildcards(4) + in_port(2) + dl_src(6)
    return match;
}

export interface FlowModFields {
    xid?: number;
    match: Buffer;
    idleTimeout: number;
    hardTimeout: number;
    priority: number;
    outputPort: number;
}

export function encodeFlowMod(fields: FlowModFields): Buffer {
    if (fields.match.length !== MATCH_LEN) throw new Error("match must be 40 bytes");
    const fixed = Buffer.alloc(24);
    fixed.writeBigUInt64BE(0n, 0); // cookie
    fixed.writeUInt16BE(OFPFC_ADD, 8);
    fixed.writeUInt16BE(fields.idleTimeout, 10);
    fixed.writeUInt16BE(fields.hardTimeout, 12);
    fixed.writeUInt16BE(fields.priority, 14);
    fixed.writeUInt32BE(NO_BUFFER, 16);
    fixed.writeUInt16BE(OFPP_NONE, 20);
    fixed.writeUInt16BE(0, 22); // flags
    const body = Buffer.concat([fields.match, fixed, packOutput(fields.outputPort)]);
    return Buffer.concat([header(OFPT_FLOW_MOD, fields.xid ?? 0, body.length), body]);
}

export function ethernetFrame(dst: Buffer, src: Buffer, ethertype: number, payload: Buffer): Buffer {
    const eth = Buffer.alloc(2);
    eth.writeUInt16BE(ethertype, 0);
    return Buffer.concat([dst, src, eth, payload]);
}
