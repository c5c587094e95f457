// Byte-for-byte conformance against fixtures generated by the Python side
// (tools/gen_golden_frames.py).  Every entry in the fixture must be covered
// here; an unknown name fails the suite rather than silently passing.

import { describe, expect, it } from "vitest";
import * as fs from "node:fs";
import * as path from "node:path";
import * as frames from "../src/frames";
import * as of from "../src/ofcodec";
import * as topic from "../src/topic";
import { MacTable, learningStep } from "../src/learning-switch";

interface Entry {
    kind: string;
    name: string;
    frame_type?: number;
    body?: string;
    encoded?: string;
    dpid?: number;
    now?: number;
    packet_in?: string;
    expect?: { topic: string; payload: string }[];
}

const entries: Entry[] = JSON.parse(
    fs.readFileSync(path.join(__dirname, "golden_frames.json"), "utf-8"),
);

const MAC_A = Buffer.from("0a0000000001", "hex");
const MAC_B = Buffer.from("0a0000000002", "hex");
const BROADCAST = Buffer.alloc(6, 0xff);

const arp = (dst: Buffer, src: Buffer) =>
    of.ethernetFrame(dst, src, topic.ETH_ARP, Buffer.alloc(28));

const statsBody = () => {
    const b = Buffer.alloc(8);
    b.writeBigUInt64BE(42n, 0);
    return b;
};

// How this SDK reproduces each named fixture's bus-frame body.
const busBodies: Record<string, () => Buffer> = {
    "heartbeat": () => Buffer.alloc(0),
    "bye": () => Buffer.alloc(0),
    "register-learning-lb0": () =>
        frames.packRegister(topic.LEARNING_SWITCH, 0x00c0ffeen,
            topic.packetInPatterns(0), [Buffer.from([topic.TO, 0, 0])]),
    "register-learning-wildcard": () =>
        frames.packRegister(topic.LEARNING_SWITCH, 0x00c0ffeen,
            topic.packetInPatterns(null), [Buffer.from([topic.TO, 0, 0])]),
    "publish-flow-mod": () =>
        frames.packPublish(
            topic.toSwitchTopic(5n, topic.FLOW_MOD),
            of.encodeFlowMod({
                match: of.matchExactDlDst(MAC_B),
                idleTimeout: 60, hardTimeout: 0, priority: 100, outputPort: 2,
            })),
    "publish-packet-out-flood": () =>
        frames.packPublish(
            topic.toSwitchTopic(5n, topic.PACKET_OUT),
            of.encodePacketOut({
                bufferId: of.NO_BUFFER, inPort: 1,
                outputPorts: [of.OFPP_FLOOD], frame: arp(BROADCAST, MAC_A),
            })),
    "reply-stats-ok": () => frames.packReply(7, 0, statsBody()),
};

const topics: Record<string, () => Buffer> = {
    "topic-packet-in-lb0-arp": () => topic.packetInTopic(0, topic.ETH_ARP),
    "topic-packet-in-lb3-ipv4-tcp": () => topic.packetInTopic(3, topic.ETH_IPV4, 6),
    "topic-to-switch-flow-mod": () => topic.toSwitchTopic(5n, topic.FLOW_MOD),
    "topic-to-switch-packet-out": () => topic.toSwitchTopic(0x1122334455667788n, topic.PACKET_OUT),
};

const ofMessages: Record<string, () => Buffer> = {
    "of-flow-mod-learned": () =>
        of.encodeFlowMod({
            match: of.matchExactDlDst(MAC_B),
            idleTimeout: 60, hardTimeout: 0, priority: 100, outputPort: 2,
        }),
    "of-packet-out-flood": () =>
        of.encodePacketOut({
            bufferId: of.NO_BUFFER, inPort: 1,
            outputPorts: [of.OFPP_FLOOD], frame: arp(BROADCAST, MAC_A),
        }),
    "of-packet-out-buffered": () =>
        of.encodePacketOut({
            bufferId: 0x42, inPort: 2, outputPorts: [1], frame: Buffer.alloc(0),
        }),
};

describe("golden bus frames", () => {
    for (const entry of entries.filter((e) => e.kind === "bus-frame")) {
        it(entry.name, () => {
            if (entry.name === "event-packet-in") {
                // Parse-side fixture: we consume events, we never encode them.
                const { topic: t, payload } = frames.parseEvent(
                    Buffer.from(entry.body!, "hex"));
                expect(t.toString("hex")).toBe(
                    topic.packetInTopic(0, topic.ETH_ARP).toString("hex"));
                expect(payload.readBigUInt64BE(0)).toBe(5n);
                const pkt = of.decodePacketIn(payload.subarray(8));
                expect(pkt.inPort).toBe(1);
                expect(pkt.bufferId).toBe(of.NO_BUFFER);
                expect(pkt.frame.subarray(6, 12).toString("hex")).toBe(MAC_A.toString("hex"));
                return;
            }
            const make = busBodies[entry.name];
            expect(make, `no TS construction for fixture "${entry.name}"`).toBeDefined();
            const body = make();
            expect(body.toString("hex")).toBe(entry.body);
            expect(frames.encodeFrame(entry.frame_type!, body).toString("hex"))
                .toBe(entry.encoded);
        });
    }
});

describe("golden topics", () => {
    for (const entry of entries.filter((e) => e.kind === "topic")) {
        it(entry.name, () => {
            const make = topics[entry.name];
            expect(make, `no TS construction for topic "${entry.name}"`).toBeDefined();
            expect(make().toString("hex")).toBe(entry.encoded);
        });
    }
});

describe("golden OpenFlow messages", () => {
    for (const entry of entries.filter((e) => e.kind === "of-message")) {
        it(entry.name, () => {
            if (entry.name === "of-packet-in-arp") {
                const pkt = of.decodePacketIn(Buffer.from(entry.encoded!, "hex"));
                expect(pkt.inPort).toBe(1);
                expect(pkt.reason).toBe(of.OFPR_NO_MATCH);
                expect(pkt.totalLen).toBe(pkt.frame.length);
                return;
            }
            const make = ofMessages[entry.name];
            expect(make, `no TS construction for message "${entry.name}"`).toBeDefined();
            expect(make().toString("hex")).toBe(entry.encoded);
        });
    }
});

describe("golden learning-step sequence", () => {
    // One shared table: the fixture entries form a single scripted run.
    const table = new MacTable();
    for (const entry of entries.filter((e) => e.kind === "learning-step")) {
        it(entry.name, () => {
            const pkt = of.decodePacketIn(Buffer.from(entry.packet_in!, "hex"));
            const got = learningStep(table, BigInt(entry.dpid!), pkt, entry.now!);
            expect(got.map((p) => [p.topic.toString("hex"), p.payload.toString("hex")]))
                .toEqual(entry.expect!.map((e) => [e.topic, e.payload]));
        });
    }
});

describe("fixture coverage", () => {
    it("every fixture kind is one this suite understands", () => {
        const known = new Set(["bus-frame", "topic", "of-message", "learning-step"]);
        for (const entry of entries) expect(known.has(entry.kind), entry.kind).toBe(true);
    });
});
