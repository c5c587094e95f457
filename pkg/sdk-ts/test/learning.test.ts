import { describe, expect, it } from "vitest";
import * as of from "../src/ofcodec";
import * as topic from "../src/topic";
import { MacTable, learningStep } from "../src/learning-switch";

const MAC_A = Buffer.from("0a0000000001", "hex");
const MAC_B = Buffer.from("0a0000000002", "hex");

function packetIn(inPort: number, dst: Buffer, src: Buffer): of.PacketIn {
    const frame = of.ethernetFrame(dst, src, topic.ETH_ARP, Buffer.alloc(28));
    return {
        xid: 0, bufferId: of.NO_BUFFER, totalLen: frame.length,
        inPort, reason: of.OFPR_NO_MATCH, frame,
    };
}

describe("MacTable", () => {
    it("ages entries out strictly after the age limit", () => {
        const table = new MacTable(300);
        table.learn(1n, MAC_A, 4, 1000);
        expect(table.lookup(1n, MAC_A, 1300)).toBe(4); // exactly at the limit
        expect(table.lookup(1n, MAC_A, 1300.1)).toBeNull();
    });

    it("keeps switches separate", () => {
        const table = new MacTable();
        table.learn(1n, MAC_A, 4, 0);
        expect(table.lookup(2n, MAC_A, 0)).toBeNull();
    });
});

describe("learningStep", () => {
    it("floods unknown destinations with the full frame", () => {
        const table = new MacTable();
        const pubs = learningStep(table, 1n, packetIn(1, MAC_B, MAC_A), 0);
        expect(pubs).toHaveLength(1);
        expect(pubs[0].topic.toString("hex"))
            .toBe(topic.toSwitchTopic(1n, topic.PACKET_OUT).toString("hex"));
        expect(pubs[0].payload[1]).toBe(of.OFPT_PACKET_OUT);
    });

    it("stays silent when the destination sits on the ingress port", () => {
        const table = new MacTable();
        learningStep(table, 1n, packetIn(1, MAC_B, MAC_A), 0);
        expect(learningStep(table, 1n, packetIn(1, MAC_A, MAC_B), 0.1)).toHaveLength(0);
    });

    it("installs a flow and forwards once the destination is known", () => {
        const table = new MacTable();
        learningStep(table, 1n, packetIn(1, MAC_B, MAC_A), 0);
        const pubs = learningStep(table, 1n, packetIn(2, MAC_A, MAC_B), 0.1);
        expect(pubs.map((p) => p.payload[1]))
            .toEqual([of.OFPT_FLOW_MOD, of.OFPT_PACKET_OUT]);
        const flowMod = pubs[0].payload;
        expect(flowMod.readUInt32BE(8)).toBe(of.OFPFW_ALL & ~of.OFPFW_DL_DST);
        expect(flowMod.subarray(20, 26).toString("hex")).toBe(MAC_A.toString("hex"));
    });

    it("never emits an output toward the ingress port", () => {
        const table = new MacTable();
        let seed = 0x5eed;
        const rand = (n: number) => {
            seed = (seed * 1103515245 + 12345) & 0x7fffffff;
            return seed % n;
        };
        for (let i = 0; i < 500; i++) {
            const src = Buffer.from([0x0a, 0, 0, 0, 0, rand(6) + 1]);
            const dst = Buffer.from([0x0a, 0, 0, 0, 0, rand(6) + 1]);
            const inPort = rand(4) + 1;
            for (const pub of learningStep(table, 1n, packetIn(inPort, dst, src), i)) {
                if (pub.payload[1] !== of.OFPT_PACKET_OUT) continue;
                const nActions = pub.payload.readUInt16BE(14) / 8;
                for (let a = 0; a < nActions; a++) {
                    const port = pub.payload.readUInt16BE(16 + a * 8 + 4);
                    expect(port === of.OFPP_FLOOD || port !== inPort).toBe(true);
                }
            }
        }
    });
});
