#!/usr/bin/env node
// L2 learning-switch controllet: learn source MAC to ingress port, install a
// dl_dst flow once the destination is known, flood unknowns.  One process
// serves one LB group shard (or all of them with --lb-wildcard).
//
// Usage: learning-switch [--lb-group N | --lb-wildcard] [--instance-id HEX]
//                        [--bus HOST:PORT] [--work-us N]

import * as crypto from "node:crypto";
import * as of from "./ofcodec";
import * as topic from "./topic";
import { BusSession, defaultBusAddr } from "./session";

export const MAC_AGE_OUT_S = 300;
export const FLOW_PRIORITY = 100;
export const FLOW_IDLE_TIMEOUT = 60;
export const OP_STATS = 0x04;

interface TableEntry {
    port: number;
    learnedAt: number;
}

/** (dpid, mac) -> ingress port, with age-out. */
export class MacTable {
    private entries = new Map<string, TableEntry>();

    constructor(private readonly ageOut: number = MAC_AGE_OUT_S) {}

    learn(dpid: bigint, mac: Buffer, port: number, now: number): void {
        this.entries.set(`${dpid}/${mac.toString("hex")}`, { port, learnedAt: now });
    }

    lookup(dpid: bigint, mac: Buffer, now: number): number | null {
        const key = `${dpid}/${mac.toString("hex")}`;
        const entry = this.entries.get(key);
        if (!entry) return null;
        if (now - entry.learnedAt > this.ageOut) {
            this.entries.delete(key);
            return null;
        }
        return entry.port;
    }

    get size(): number {
        return this.entries.size;
    }
}

export interface Publication {
    topic: Buffer;
    payload: Buffer;
}

/** One packet-in through the learning algorithm; updates the table in place. */
export function learningStep(
    table: MacTable,
    dpid: bigint,
    pkt: of.PacketIn,
    now: number,
): Publication[] {
    const ethDst = pkt.frame.subarray(0, 6);
    const ethSrc = pkt.frame.subarray(6, 12);
    table.learn(dpid, ethSrc, pkt.inPort, now);
    const outPort = table.lookup(dpid, ethDst, now);
    if (outPort === pkt.inPort) {
        return []; // destination is back where it came from: nothing to do
    }
    const frame = pkt.bufferId === of.NO_BUFFER ? pkt.frame : Buffer.alloc(0);
    if (outPort === null) {
        const flood = of.encodePacketOut({
            xid: pkt.xid, bufferId: pkt.bufferId, inPort: pkt.inPort,
            outputPorts: [of.OFPP_FLOOD], frame,
        });
        return [{ topic: topic.toSwitchTopic(dpid, topic.PACKET_OUT), payload: flood }];
    }
    const flowMod = of.encodeFlowMod({
        xid: pkt.xid,
        match: of.matchExactDlDst(ethDst),
        idleTimeout: FLOW_IDLE_TIMEOUT,
        hardTimeout: 0,
        priority: FLOW_PRIORITY,
        outputPort: outPort,
    });
    const packetOut = of.encodePacketOut({
        xid: pkt.xid, bufferId: pkt.bufferId, inPort: pkt.inPort,
        outputPorts: [outPort], frame,
    });
    return [
        { topic: topic.toSwitchTopic(dpid, topic.FLOW_MOD), payload: flowMod },
        { topic: topic.toSwitchTopic(dpid, topic.PACKET_OUT), payload: packetOut },
    ];
}

interface Args {
    lbGroup: number | null;
    instanceId: bigint;
    bus: string;
    workUs: number;
}

function parseArgs(argv: string[]): Args {
    const args: Args = {
        lbGroup: 0,
        instanceId: randomInstanceId(),
        bus: defaultBusAddr(),
        workUs: 0,
    };
    for (let i = 0; i < argv.length; i++) {
        switch (argv[i]) {
            case "--lb-group":
                args.lbGroup = Number(argv[++i]);
                break;
            case "--lb-wildcard":
                args.lbGroup = null;
                break;
            case "--instance-id":
                args.instanceId = BigInt("0x" + argv[++i].replace(/^0x/i, ""));
                break;
            case "--bus":
                args.bus = argv[++i];
                break;
            case "--work-us":
                args.workUs = Number(argv[++i]);
                break;
            default:
                console.error(`unknown argument: ${argv[i]}`);
                process.exit(2);
        }
    }
    return args;
}

function randomInstanceId(): bigint {
    for (;;) {
        const id = crypto.randomBytes(8).readBigUInt64BE(0);
        if (id !== 0n) return id;
    }
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

async function main(): Promise<void> {
    const args = parseArgs(process.argv.slice(2));
    const session = new BusSession(args.bus);
    const table = new MacTable();
    let processed = 0;
    let chain = Promise.resolve();

    session.onRequest = (payload) => {
        if (payload.length === 1 && payload[0] === OP_STATS) {
            const stats = Buffer.alloc(8);
            stats.writeBigUInt64BE(BigInt(processed), 0);
            return [0, stats];
        }
        return [1, Buffer.alloc(0)];
    };

    session.on("event", (eventTopic: Buffer, payload: Buffer) => {
        if (payload.length < 8) return;
        const dpid = payload.readBigUInt64BE(0);
        let pkt: of.PacketIn;
        try {
            pkt = of.decodePacketIn(payload.subarray(8));
        } catch (err) {
            console.error(`[learning-switch] dropped undecodable packet-in: ${err}`);
            return;
        }
        // Serialize processing so FLOW_MOD always precedes its PACKET_OUT,
        // with work-us of simulated per-packet control latency.
        chain = chain.then(async () => {
            if (args.workUs > 0) await sleep(args.workUs / 1000);
            for (const pub of learningStep(table, dpid, pkt, Date.now() / 1000)) {
                session.publish(pub.topic, pub.payload);
            }
            processed += 1;
        });
    });

    session.on("close", () => {
        console.error("[learning-switch] bus connection lost");
        process.exit(1);
    });

    await session.connect();
    const assigned = await session.register(
        topic.LEARNING_SWITCH,
        args.instanceId,
        topic.packetInPatterns(args.lbGroup),
        [Buffer.from([topic.TO, 0x00, 0x00])],
    );
    const shard = args.lbGroup === null ? "wildcard" : `group ${args.lbGroup}`;
    console.log(`learning-switch 0x${assigned.toString(16)} up on ${args.bus} (${shard})`);

    const quit = () => {
        session.removeAllListeners("close");
        session.close();
        process.exit(0);
    };
    process.on("SIGINT", quit);
    process.on("SIGTERM", quit);
}

if (require.main === module) {
    main().catch((err) => {
        console.error(`[learning-switch] ${err}`);
        process.exit(1);
    });
}
