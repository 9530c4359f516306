mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use janus_auth::bitcodec::{
    pack_challenge, parse_hex, unpack_challenge, AuthAdb, CargoFrame, UNICAST_BYTES,
};
use janus_auth::channelsim::{run_scenario, Scenario, ScenarioError};
use janus_auth::keystore::{LongTermKeyRecord, DEFAULT_LIFETIME_DAYS};
use janus_auth::ranging::{
    estimate_distance, estimate_distance_with_current, unwrap_timestamps, RangingError,
    DEFAULT_SOUND_SPEED_MPS,
};
use janus_auth::time::stamp;
use janus_auth::unicast::{receive_unicast, send_unicast, UnicastError, UnicastOutcome};
use janus_auth::{
    BaselinePacket, ClockDescriptor, CodecError, JanusHeader, KeyMaterial, KeySlot, KeyStore,
    KeyStoreError, Mmsi, UnicastPacket,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use table::{Format, Table};

const STORE_ENV: &str = "JANUS_AUTH_STORE";

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Integrity(String),
    #[error("{0}")]
    Protocol(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Integrity(_) => 3,
            CliError::Protocol(_) => 4,
        }
    }
}

impl From<CodecError> for CliError {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::CrcMismatch { .. } => CliError::Integrity(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<KeyStoreError> for CliError {
    fn from(e: KeyStoreError) -> Self {
        match e {
            KeyStoreError::Parse { .. } => CliError::Integrity(format!("keystore: {e}")),
            KeyStoreError::NotFound(_) | KeyStoreError::Expired(_) | KeyStoreError::NoSession(_) => {
                CliError::Protocol(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::KeyStore(k) => k.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<RangingError> for CliError {
    fn from(e: RangingError) -> Self {
        match e {
            RangingError::Supersonic { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Protocol(e.to_string()),
        }
    }
}

impl From<UnicastError> for CliError {
    fn from(e: UnicastError) -> Self {
        match e {
            UnicastError::Codec(c) => c.into(),
            other => CliError::Protocol(other.to_string()),
        }
    }
}

/// Key management, packet tooling and simulation for JANUS mutual
/// authentication.
#[derive(Debug, Parser)]
#[command(name = "janus-auth", version)]
struct Cli {
    /// Output style.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a 255-byte long-term key and add it to a keystore.
    Keygen(KeygenArgs),
    /// Build a packet and print it as hex.
    #[command(subcommand)]
    Craft(Craft),
    /// Print the fields of a hex packet.
    Decode(DecodeArgs),
    /// Send or receive a unicast secure packet.
    #[command(subcommand)]
    Unicast(UnicastCmd),
    /// Run a scenario file on the virtual channel.
    Simulate(SimulateArgs),
    /// Distance and clock offset from three timestamps in seconds.
    Range(RangeArgs),
}

#[derive(Debug, Args)]
struct StoreArg {
    /// Keystore file.
    #[arg(long, env = STORE_ENV)]
    store: PathBuf,
}

#[derive(Debug, Args)]
struct SlotArgs {
    #[arg(long)]
    class_id: u8,
    #[arg(long)]
    app_type: u8,
}

impl SlotArgs {
    fn slot(&self) -> Result<KeySlot, CliError> {
        Ok(KeySlot::new(self.class_id, self.app_type)?)
    }
}

#[derive(Debug, Args)]
struct KeygenArgs {
    #[command(flatten)]
    store: StoreArg,
    #[command(flatten)]
    slot: SlotArgs,
    /// Deterministic key from this seed instead of OS entropy.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace an existing key for the same slot.
    #[arg(long)]
    force: bool,
    /// MMSI of the device sharing this key.
    #[arg(long)]
    peer_mmsi: Option<Mmsi>,
    /// Start of the key lifetime, RFC 3339. Defaults to now.
    #[arg(long)]
    epoch: Option<DateTime<Utc>>,
    #[arg(long, default_value_t = DEFAULT_LIFETIME_DAYS)]
    lifetime_days: u32,
}

#[derive(Debug, Subcommand)]
enum Craft {
    /// Baseline packet from raw fields.
    Baseline(BaselineArgs),
    /// Encrypted challenge (SYN=1 ACK=0) under a stored long-term key.
    Challenge(AuthPacketArgs),
    /// Encrypted response (SYN=1 ACK=1) under a stored long-term key.
    Response(AuthPacketArgs),
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    slot: SlotArgs,
    #[arg(long, default_value_t = janus_auth::bitcodec::JANUS_VERSION)]
    version: u8,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    mobility: bool,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    schedule: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    txrx: bool,
    #[arg(long, default_value_t = false, action = clap::ArgAction::Set)]
    forward: bool,
    /// Whole 34-bit ADB in hex.
    #[arg(long, conflicts_with_all = ["block", "syn", "ack"])]
    adb: Option<String>,
    /// 32-bit cipher block in hex.
    #[arg(long)]
    block: Option<String>,
    #[arg(long)]
    syn: bool,
    #[arg(long)]
    ack: bool,
}

#[derive(Debug, Args)]
struct AuthPacketArgs {
    #[command(flatten)]
    store: StoreArg,
    #[command(flatten)]
    slot: SlotArgs,
    /// Send time, RFC 3339. Defaults to now.
    #[arg(long)]
    time: Option<DateTime<Utc>>,
    /// Clock descriptor code 0-7.
    #[arg(long, default_value_t = 3)]
    cd: u8,
}

#[derive(Debug, Args)]
struct DecodeArgs {
    /// Packet bytes in hex (8 bytes baseline, 18 unicast, otherwise cargo).
    hex: String,
    /// Trial-decrypt with the keys in this store.
    #[arg(long, env = STORE_ENV)]
    store: Option<PathBuf>,
    /// Own MMSI, for unicast sender identification.
    #[arg(long)]
    me: Option<Mmsi>,
}

#[derive(Debug, Subcommand)]
enum UnicastCmd {
    /// Encrypt and tag a 64-bit payload for an established peer.
    Send {
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        dest: Mmsi,
        /// Payload in hex, up to 16 digits.
        #[arg(long)]
        payload: String,
    },
    /// Identify the sender of a packet and decrypt it.
    Recv {
        hex: String,
        #[command(flatten)]
        store: StoreArg,
        #[arg(long)]
        me: Mmsi,
    },
}

#[derive(Debug, Args)]
struct SimulateArgs {
    scenario: PathBuf,
    /// Write the event trace here (TSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the metrics here (TSV).
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct RangeArgs {
    t_a1: f64,
    t_b1: f64,
    t_a2: f64,
    #[arg(long, default_value_t = DEFAULT_SOUND_SPEED_MPS)]
    sound_speed: f64,
    /// Known along-track current in m/s.
    #[arg(long)]
    current: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let f = cli.format;
    match cli.command {
        Command::Keygen(a) => keygen(a, f),
        Command::Craft(c) => craft(c, f),
        Command::Decode(a) => decode(a, f),
        Command::Unicast(u) => unicast(u, f),
        Command::Simulate(a) => simulate(a, f),
        Command::Range(a) => range(a, f),
    }
}

fn load_store(path: &Path) -> Result<KeyStore, CliError> {
    KeyStore::load(path).map_err(|e| match e {
        KeyStoreError::Io(io) => CliError::Usage(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

fn save_store(store: &KeyStore, path: &Path) -> Result<(), CliError> {
    store
        .save(path)
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn keygen(a: KeygenArgs, f: Format) -> Result<(), CliError> {
    let slot = a.slot.slot()?;
    let path = &a.store.store;
    let mut store = if path.exists() {
        load_store(path)?
    } else {
        KeyStore::new()
    };
    let key = match a.seed {
        Some(seed) => KeyMaterial::generate_longterm(&mut ChaCha8Rng::seed_from_u64(seed)),
        None => KeyMaterial::generate_longterm(&mut rand::rngs::OsRng),
    };
    let hex = key.to_hex();
    let record = LongTermKeyRecord::new(slot, key, a.epoch.unwrap_or_else(Utc::now), a.peer_mmsi)
        .with_lifetime(a.lifetime_days);
    if a.force {
        store.replace_longterm(record);
    } else {
        store.insert_longterm(record).map_err(|e| match e {
            KeyStoreError::Duplicate(_) => CliError::Usage(format!("{e}; pass --force to replace it")),
            other => other.into(),
        })?;
    }
    save_store(&store, path)?;
    let mut t = Table::new();
    t.row("slot", slot).row("key", hex);
    print!("{}", t.render(f));
    Ok(())
}

fn parse_hex_u64(s: &str, max_bits: u32) -> Result<u64, CliError> {
    let v = u64::from_str_radix(s.trim_start_matches("0x"), 16)
        .map_err(|e| CliError::Usage(format!("bad hex {s:?}: {e}")))?;
    if max_bits < 64 && v >> max_bits != 0 {
        return Err(CliError::Usage(format!("{s} does not fit in {max_bits} bits")));
    }
    Ok(v)
}

fn craft(c: Craft, f: Format) -> Result<(), CliError> {
    let packet = match c {
        Craft::Baseline(a) => {
            let adb = match (&a.adb, &a.block) {
                (Some(adb), _) => parse_hex_u64(adb, 34)?,
                (None, block) => AuthAdb {
                    encrypted_block: block.as_deref().map_or(Ok(0), |b| parse_hex_u64(b, 32))? as u32,
                    syn: a.syn,
                    ack: a.ack,
                }
                .to_adb(),
            };
            let header = JanusHeader {
                version: a.version,
                mobility: a.mobility,
                schedule: a.schedule,
                txrx: a.txrx,
                forward: a.forward,
                class_user_id: a.slot.class_id,
                application_type: a.slot.app_type,
            };
            BaselinePacket::new(header, adb)
        }
        Craft::Challenge(a) => auth_packet(&a, false)?,
        Craft::Response(a) => auth_packet(&a, true)?,
    };
    let mut t = Table::new();
    t.row("hex", packet.to_hex()?);
    print!("{}", t.render(f));
    Ok(())
}

fn auth_packet(a: &AuthPacketArgs, response: bool) -> Result<BaselinePacket, CliError> {
    let slot = a.slot.slot()?;
    let store = load_store(&a.store.store)?;
    let now = a.time.unwrap_or_else(Utc::now);
    let record = store.lookup_longterm(slot, now)?.record;
    let (ts, _) = stamp(now);
    let block = record
        .block_cipher()
        .encrypt_u32(pack_challenge(ts, ClockDescriptor::new(a.cd)?))
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let adb = AuthAdb {
        encrypted_block: block,
        syn: true,
        ack: response,
    };
    Ok(BaselinePacket::new(
        JanusHeader::new(slot.class_user_id, slot.application_type),
        adb.to_adb(),
    ))
}

fn header_rows(t: &mut Table, h: &JanusHeader) {
    t.row("version", h.version)
        .row("mobility", h.mobility)
        .row("schedule", h.schedule)
        .row("txrx", h.txrx)
        .row("forward", h.forward)
        .row("class_id", h.class_user_id)
        .row("app_type", h.application_type);
}

fn flag_meaning(syn: bool, ack: bool, baseline: bool) -> &'static str {
    match (syn, ack, baseline) {
        (true, false, _) => "challenge",
        (true, true, _) => "response",
        (false, true, true) => "renewal confirmation",
        (false, true, false) => "session data",
        (false, false, _) => "unused",
    }
}

fn decode(a: DecodeArgs, f: Format) -> Result<(), CliError> {
    let clean = a.hex.trim().trim_start_matches("0x");
    if clean.len() % 2 != 0 || clean.len() < 16 {
        return Err(CliError::Usage(format!(
            "hex must be an even number of digits, at least 16; got {}",
            clean.len()
        )));
    }
    let bytes = parse_hex(clean, clean.len() / 2)?;
    let store = a.store.as_deref().map(load_store).transpose()?;
    let mut t = Table::new();
    let outcome = match bytes.len() {
        8 => decode_baseline(&bytes, store.as_ref(), &mut t),
        UNICAST_BYTES => decode_unicast(&bytes, store.as_ref(), a.me, &mut t),
        _ => decode_cargo(&bytes, &mut t),
    };
    print!("{}", t.render(f));
    if let Err(CliError::Integrity(why)) = &outcome {
        eprintln!("warning: {why}");
    }
    outcome
}

fn decode_baseline(bytes: &[u8], store: Option<&KeyStore>, t: &mut Table) -> Result<(), CliError> {
    let raw = BaselinePacket::parse_unchecked(u64::from_be_bytes(bytes.try_into().unwrap()));
    let p = raw.packet;
    let adb = AuthAdb::from_adb(p.adb);
    t.row("kind", "baseline");
    header_rows(t, &p.header);
    t.row("adb", format!("{:09x}", p.adb))
        .row("block", format!("{:08x}", adb.encrypted_block))
        .row("syn", adb.syn)
        .row("ack", adb.ack)
        .row("meaning", flag_meaning(adb.syn, adb.ack, true))
        .row("crc", format!("{:02x}", raw.stored_crc))
        .row("crc_ok", raw.crc_ok());
    if let Some(store) = store {
        let mut tried = 0;
        for rec in store
            .longterm_records()
            .filter(|r| r.slot.class_user_id == p.header.class_user_id)
        {
            tried += 1;
            let plain = rec
                .block_cipher()
                .decrypt_u32(adb.encrypted_block)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let value = match (adb.syn, unpack_challenge(plain)) {
                (true, Ok((ts, cd))) => format!("timestamp {ts} cd {}", cd.code()),
                (false, _) if plain & 3 == 0 && plain >> 2 <= 999_999_999 => {
                    format!("mmsi {:09}", plain >> 2)
                }
                _ => format!("no legal plaintext ({plain:08x})"),
            };
            t.row(format!("trial {}", rec.slot), value);
        }
        if tried == 0 {
            t.row("trial", "no key for this class");
        }
    }
    if !raw.crc_ok() {
        return Err(CliError::Integrity(format!(
            "CRC mismatch (stored {:02x}, computed {:02x}); fields shown raw",
            raw.stored_crc, raw.computed_crc
        )));
    }
    Ok(())
}

fn decode_unicast(
    bytes: &[u8],
    store: Option<&KeyStore>,
    me: Option<Mmsi>,
    t: &mut Table,
) -> Result<(), CliError> {
    let p = UnicastPacket::decode(bytes)?;
    t.row("kind", "unicast");
    header_rows(t, &p.header);
    t.row("cargo_len", p.cargo_len)
        .row("routing_id", format!("{:06x}", p.routing_id))
        .row("syn", p.syn)
        .row("ack", p.ack)
        .row("meaning", flag_meaning(p.syn, p.ack, false))
        .row("payload", format!("{:016x}", p.encrypted_payload))
        .row("hmac", format!("{:02x}", p.hmac));
    if let (Some(store), Some(me)) = (store, me) {
        unicast_rows(&receive_unicast(store, &p, me)?, t);
    }
    Ok(())
}

fn decode_cargo(bytes: &[u8], t: &mut Table) -> Result<(), CliError> {
    let c = CargoFrame::decode(bytes)?;
    t.row("kind", "cargo");
    header_rows(t, &c.header);
    t.row("routing_id", format!("{:06x}", c.routing_id))
        .row("syn", c.syn)
        .row("ack", c.ack)
        .row("meaning", flag_meaning(c.syn, c.ack, false))
        .row("body_bytes", c.body.len());
    Ok(())
}

/// Adds the outcome rows and reports whether a unique sender was found.
fn unicast_rows(outcome: &UnicastOutcome, t: &mut Table) -> bool {
    match outcome {
        UnicastOutcome::Delivered { sender, payload } => {
            t.row("sender", sender).row("plaintext", format!("{payload:016x}"));
            true
        }
        UnicastOutcome::RelayCandidate { routing_id } => {
            t.row("relay", format!("not addressed to us (routing id {routing_id:06x})"));
            true
        }
        UnicastOutcome::Unidentified => {
            t.row("sender", "unidentified");
            false
        }
        UnicastOutcome::Ambiguous(c) => {
            let names: Vec<String> = c.iter().map(ToString::to_string).collect();
            t.row("sender", format!("ambiguous: {}", names.join(",")));
            false
        }
    }
}

fn unicast(u: UnicastCmd, f: Format) -> Result<(), CliError> {
    let mut t = Table::new();
    match u {
        UnicastCmd::Send {
            store,
            dest,
            payload,
        } => {
            let payload = parse_hex_u64(&payload, 64)?;
            let mut ks = load_store(&store.store)?;
            let header = ks
                .longterm_for_peer(dest)
                .map_or(JanusHeader::new(0, 0), |r| {
                    JanusHeader::new(r.slot.class_user_id, r.slot.application_type)
                });
            let p = send_unicast(&ks, header, dest, payload)?;
            let renew = ks.note_packet_used(dest)?;
            save_store(&ks, &store.store)?;
            t.row("hex", p.to_hex()?);
            if renew {
                t.row("note", "session key reached its packet limit; re-authenticate");
            }
            print!("{}", t.render(f));
            Ok(())
        }
        UnicastCmd::Recv { hex, store, me } => {
            let p = UnicastPacket::from_hex(hex.trim())?;
            let ks = load_store(&store.store)?;
            let unique = unicast_rows(&receive_unicast(&ks, &p, me)?, &mut t);
            print!("{}", t.render(f));
            if unique {
                Ok(())
            } else {
                Err(CliError::Protocol("sender not identified".into()))
            }
        }
    }
}

fn simulate(a: SimulateArgs, f: Format) -> Result<(), CliError> {
    let mut scenario = Scenario::load(&a.scenario)?;
    if let Some(seed) = a.seed {
        scenario.channel.seed = seed;
    }
    let out = run_scenario(&scenario)?;
    let write = |path: &Path, text: String| {
        std::fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    };
    if let Some(p) = &a.trace {
        write(p, out.trace_tsv())?;
    }
    if let Some(p) = &a.metrics {
        write(p, out.metrics.to_tsv())?;
    }
    let mut t = Table::new();
    for line in out.metrics.to_tsv().lines() {
        if let Some((k, v)) = line.split_once('\t') {
            t.row(k, v);
        }
    }
    print!("{}", t.render(f));
    Ok(())
}

fn range(a: RangeArgs, f: Format) -> Result<(), CliError> {
    let (a1, b1, a2) = unwrap_timestamps(a.t_a1, a.t_b1, a.t_a2)?;
    let est = match a.current {
        Some(v) => estimate_distance_with_current(a1, b1, a2, a.sound_speed, v)?,
        None => estimate_distance(a1, b1, a2, a.sound_speed)?,
    };
    let mut t = Table::new();
    t.row("distance_m", format!("{:.3}", est.distance_m))
        .row("clock_offset_s", format!("{:.6}", est.clock_offset_s))
        .row("round_trip_s", format!("{:.6}", est.round_trip_s))
        .row("quantization_bound_m", format!("{:.3}", est.quantization_bound_m));
    print!("{}", t.render(f));
    Ok(())
}
