//! Framed wire protocol: a 4-byte big-endian length prefix followed by a
//! canonical flat text document — one `key=value` per line, keys sorted
//! lexicographically, big integers as lowercase hex, vectors comma-joined.
//! The canonical form is bit-exact: encoding the same envelope twice
//! yields identical bytes, which is what makes golden-file tests work.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};

use num_bigint::BigUint;

use ppa_afl_core::encoding::ModelVector;
use ppa_afl_core::paillier::{Ciphertext, KeyFingerprint, PaillierPublicKey};
use ppa_afl_core::protocol::{
    AggregationRequest, ClientResponse, Notification, NotificationKind, RejectionReason, Tag,
    Update,
};
use ppa_afl_core::shamir::Share;

pub const PROTOCOL_VERSION: u64 = 1;

/// Default ceiling on one frame. Encrypted model vectors are large: m
/// ciphertexts at 2048-bit keys run to megabytes.
pub const DEFAULT_MAX_FRAME: u32 = 64 * 1024 * 1024;

#[derive(Debug)]
pub enum WireError {
    Io(io::Error),
    /// Declared frame length exceeds the configured maximum; detected
    /// before any allocation.
    Oversize { declared: u32, max: u32 },
    Truncated,
    ProtocolVersion(u64),
    UnknownType(String),
    MalformedLine(String),
    MissingField(&'static str),
    UnknownField(String),
    BadValue { field: String, value: String },
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "io error: {e}"),
            Self::Oversize { declared, max } => {
                write!(f, "frame of {declared} bytes exceeds the {max}-byte limit")
            }
            Self::Truncated => write!(f, "truncated frame"),
            Self::ProtocolVersion(v) => write!(f, "unsupported protocol version {v}"),
            Self::UnknownType(t) => write!(f, "unknown message type {t:?}"),
            Self::MalformedLine(l) => write!(f, "malformed line {l:?}"),
            Self::MissingField(k) => write!(f, "missing field {k}"),
            Self::UnknownField(k) => write!(f, "unknown field {k:?}"),
            Self::BadValue { field, value } => write!(f, "bad value for {field}: {value:?}"),
        }
    }
}

impl std::error::Error for WireError {}

impl From<io::Error> for WireError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Self::Truncated
        } else {
            Self::Io(e)
        }
    }
}

/// Every message that crosses a socket.
#[derive(Debug, Clone)]
pub enum Envelope {
    ClientRequest {
        client_id: String,
    },
    ClientResponse(ClientResponse),
    Update(Update),
    AggregationRequest(AggregationRequest),
    /// The encryption server's direct reply to an aggregation request.
    AggregationResult {
        tag: Tag,
        accepted: bool,
        reason: Option<RejectionReason>,
        new_tag: Tag,
        update_count: u64,
    },
    /// Epoch broadcast; carries the live epoch's public key so the
    /// aggregation server can evaluate over the right modulus.
    Notification {
        notification: Notification,
        public_key: PaillierPublicKey,
    },
    Error {
        message: String,
    },
}

impl Envelope {
    pub fn msg_type(&self) -> &'static str {
        match self {
            Self::ClientRequest { .. } => "client_request",
            Self::ClientResponse(_) => "client_response",
            Self::Update(_) => "update",
            Self::AggregationRequest(_) => "aggregation_request",
            Self::AggregationResult { .. } => "aggregation_result",
            Self::Notification { .. } => "notification",
            Self::Error { .. } => "error",
        }
    }

    pub fn tag(&self) -> Tag {
        match self {
            Self::ClientRequest { .. } | Self::Error { .. } => 0,
            Self::ClientResponse(r) => r.tag,
            Self::Update(u) => u.tag,
            Self::AggregationRequest(r) => r.tag,
            Self::AggregationResult { tag, .. } => *tag,
            Self::Notification { notification, .. } => notification.tag,
        }
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next()? {
            '\\' => out.push('\\'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            _ => return None,
        }
    }
    Some(out)
}

fn hex(n: &BigUint) -> String {
    n.to_str_radix(16)
}

fn f64_hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn join<T, F: Fn(&T) -> String>(items: &[T], f: F) -> String {
    items.iter().map(|i| f(i)).collect::<Vec<_>>().join(",")
}

/// Writes fields into the canonical sorted key=value layout.
struct Fields(BTreeMap<&'static str, String>);

impl Fields {
    fn new(msg_type: &'static str, tag: Tag) -> Self {
        let mut map = BTreeMap::new();
        map.insert("type", msg_type.to_string());
        map.insert("tag", tag.to_string());
        map.insert("v", PROTOCOL_VERSION.to_string());
        Self(map)
    }

    fn put(&mut self, key: &'static str, value: String) -> &mut Self {
        self.0.insert(key, value);
        self
    }

    fn render(&self) -> Vec<u8> {
        let mut out = String::new();
        for (k, v) in &self.0 {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out.into_bytes()
    }
}

/// Read-side field map with consumption tracking, so unknown fields are
/// rejected once decoding finishes.
struct Parsed {
    map: BTreeMap<String, String>,
}

impl Parsed {
    fn parse(body: &[u8]) -> Result<Self, WireError> {
        let text = std::str::from_utf8(body)
            .map_err(|_| WireError::MalformedLine("<non-utf8>".into()))?;
        let mut map = BTreeMap::new();
        for line in text.split('\n') {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| WireError::MalformedLine(line.to_string()))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(WireError::MalformedLine(line.to_string()));
            }
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &'static str) -> Result<String, WireError> {
        self.map.remove(key).ok_or(WireError::MissingField(key))
    }

    fn finish(self) -> Result<(), WireError> {
        match self.map.into_keys().next() {
            Some(k) => Err(WireError::UnknownField(k)),
            None => Ok(()),
        }
    }

    fn u64_field(&mut self, key: &'static str) -> Result<u64, WireError> {
        let value = self.take(key)?;
        value
            .parse()
            .map_err(|_| WireError::BadValue { field: key.into(), value })
    }

    fn usize_field(&mut self, key: &'static str) -> Result<usize, WireError> {
        let value = self.take(key)?;
        value
            .parse()
            .map_err(|_| WireError::BadValue { field: key.into(), value })
    }

    fn biguint_field(&mut self, key: &'static str) -> Result<BigUint, WireError> {
        let value = self.take(key)?;
        parse_hex(&value).ok_or(WireError::BadValue { field: key.into(), value })
    }

    fn string_field(&mut self, key: &'static str) -> Result<String, WireError> {
        let value = self.take(key)?;
        unescape(&value).ok_or(WireError::BadValue { field: key.into(), value })
    }

    fn list_field<T>(
        &mut self,
        key: &'static str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<Vec<T>, WireError> {
        let value = self.take(key)?;
        if value.is_empty() {
            return Ok(Vec::new());
        }
        value
            .split(',')
            .map(|item| {
                parse(item).ok_or_else(|| WireError::BadValue {
                    field: key.into(),
                    value: item.to_string(),
                })
            })
            .collect()
    }

    fn fingerprint_field(&mut self, key: &'static str) -> Result<KeyFingerprint, WireError> {
        let value = self.take(key)?;
        let bytes = parse_fixed_hex::<16>(&value)
            .ok_or(WireError::BadValue { field: key.into(), value })?;
        Ok(KeyFingerprint::from_bytes(bytes))
    }
}

fn parse_hex(s: &str) -> Option<BigUint> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    BigUint::parse_bytes(s.as_bytes(), 16)
}

fn parse_fixed_hex<const N: usize>(s: &str) -> Option<[u8; N]> {
    if s.len() != 2 * N {
        return None;
    }
    let mut out = [0u8; N];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16)?;
        let lo = (chunk[1] as char).to_digit(16)?;
        out[i] = (hi * 16 + lo) as u8;
    }
    Some(out)
}

fn parse_f64_bits(s: &str) -> Option<f64> {
    if s.len() != 16 {
        return None;
    }
    u64::from_str_radix(s, 16).ok().map(f64::from_bits)
}

fn fingerprint_hex(fp: &KeyFingerprint) -> String {
    fp.to_string()
}

fn share_fields(fields: &mut Fields, share: &Share) {
    fields.put("share_index", share.index.to_string());
    fields.put("share_value", hex(&share.value));
    fields.put("share_tag", share.tag.to_string());
}

fn parse_share(parsed: &mut Parsed) -> Result<Share, WireError> {
    let index = parsed.u64_field("share_index")?;
    let value = parsed.biguint_field("share_value")?;
    let tag = parsed.u64_field("share_tag")?;
    Ok(Share { index, value, tag })
}

impl Envelope {
    /// Canonical body bytes (no length prefix).
    pub fn encode(&self) -> Vec<u8> {
        let mut fields = Fields::new(self.msg_type(), self.tag());
        match self {
            Self::ClientRequest { client_id } => {
                fields.put("client_id", escape(client_id));
            }
            Self::ClientResponse(r) => {
                fields.put("pk_n", hex(r.public_key.n()));
                fields.put("pk_g", hex(r.public_key.g()));
                fields.put("threshold", r.threshold.to_string());
                fields.put("model", join(r.global_model.values(), |x| f64_hex(*x)));
                share_fields(&mut fields, &r.share);
            }
            Self::Update(u) => {
                fields.put("client_id", escape(&u.client_id));
                fields.put("count", u.count.to_string());
                let fp = u
                    .ciphertexts
                    .first()
                    .map(|c| c.key_fingerprint())
                    .unwrap_or(KeyFingerprint::from_bytes([0; 16]));
                fields.put("fingerprint", fingerprint_hex(&fp));
                fields.put("ciphertexts", join(&u.ciphertexts, |c| hex(c.value())));
                share_fields(&mut fields, &u.share);
            }
            Self::AggregationRequest(r) => {
                let fp = r
                    .aggregate
                    .first()
                    .map(|c| c.key_fingerprint())
                    .unwrap_or(KeyFingerprint::from_bytes([0; 16]));
                fields.put("fingerprint", fingerprint_hex(&fp));
                fields.put("aggregate", join(&r.aggregate, |c| hex(c.value())));
                fields.put("share_indices", join(&r.shares, |s| s.index.to_string()));
                fields.put("share_values", join(&r.shares, |s| hex(&s.value)));
                fields.put("share_tags", join(&r.shares, |s| s.tag.to_string()));
            }
            Self::AggregationResult { accepted, reason, new_tag, update_count, .. } => {
                fields.put("accepted", if *accepted { "1" } else { "0" }.to_string());
                fields.put(
                    "reason",
                    reason.map(|r| r.as_str().to_string()).unwrap_or_default(),
                );
                fields.put("new_tag", new_tag.to_string());
                fields.put("update_count", update_count.to_string());
            }
            Self::Notification { notification, public_key } => {
                let (kind, reason) = match notification.kind {
                    NotificationKind::EpochOpen => ("epoch_open", String::new()),
                    NotificationKind::AggregationSucceeded => {
                        ("aggregation_succeeded", String::new())
                    }
                    NotificationKind::AggregationFailed(r) => {
                        ("aggregation_failed", r.as_str().to_string())
                    }
                };
                fields.put("kind", kind.to_string());
                fields.put("reason", reason);
                fields.put("threshold", notification.threshold.to_string());
                fields.put("pk_n", hex(public_key.n()));
                fields.put("pk_g", hex(public_key.g()));
            }
            Self::Error { message } => {
                fields.put("message", escape(message));
            }
        }
        fields.render()
    }

    pub fn decode(body: &[u8]) -> Result<Self, WireError> {
        let mut parsed = Parsed::parse(body)?;
        let version = parsed.u64_field("v")?;
        if version != PROTOCOL_VERSION {
            return Err(WireError::ProtocolVersion(version));
        }
        let msg_type = parsed.take("type")?;
        let tag = parsed.u64_field("tag")?;
        let envelope = match msg_type.as_str() {
            "client_request" => Self::ClientRequest { client_id: parsed.string_field("client_id")? },
            "client_response" => {
                let n = parsed.biguint_field("pk_n")?;
                let g = parsed.biguint_field("pk_g")?;
                let public_key = PaillierPublicKey::from_parts(n, g).map_err(|_| {
                    WireError::BadValue { field: "pk_g".into(), value: "non-standard".into() }
                })?;
                let threshold = parsed.usize_field("threshold")?;
                let model = parsed.list_field("model", parse_f64_bits)?;
                let share = parse_share(&mut parsed)?;
                Self::ClientResponse(ClientResponse {
                    tag,
                    public_key,
                    share,
                    global_model: ModelVector::new(model),
                    threshold,
                })
            }
            "update" => {
                let client_id = parsed.string_field("client_id")?;
                let count = parsed.u64_field("count")?;
                let fingerprint = parsed.fingerprint_field("fingerprint")?;
                let values = parsed.list_field("ciphertexts", parse_hex)?;
                let share = parse_share(&mut parsed)?;
                let ciphertexts = values
                    .into_iter()
                    .map(|value| Ciphertext::from_parts(value, fingerprint))
                    .collect();
                Self::Update(Update { tag, client_id, count, ciphertexts, share })
            }
            "aggregation_request" => {
                let fingerprint = parsed.fingerprint_field("fingerprint")?;
                let values = parsed.list_field("aggregate", parse_hex)?;
                let indices = parsed.list_field("share_indices", |s| s.parse::<u64>().ok())?;
                let share_values = parsed.list_field("share_values", parse_hex)?;
                let tags = parsed.list_field("share_tags", |s| s.parse::<u64>().ok())?;
                if indices.len() != share_values.len() || indices.len() != tags.len() {
                    return Err(WireError::BadValue {
                        field: "share_indices".into(),
                        value: "length mismatch".into(),
                    });
                }
                let aggregate = values
                    .into_iter()
                    .map(|value| Ciphertext::from_parts(value, fingerprint))
                    .collect();
                let shares = indices
                    .into_iter()
                    .zip(share_values)
                    .zip(tags)
                    .map(|((index, value), tag)| Share { index, value, tag })
                    .collect();
                Self::AggregationRequest(AggregationRequest { tag, aggregate, shares })
            }
            "aggregation_result" => {
                let accepted = match parsed.take("accepted")?.as_str() {
                    "1" => true,
                    "0" => false,
                    other => {
                        return Err(WireError::BadValue {
                            field: "accepted".into(),
                            value: other.into(),
                        })
                    }
                };
                let reason_raw = parsed.take("reason")?;
                let reason = if reason_raw.is_empty() {
                    None
                } else {
                    Some(RejectionReason::from_str(&reason_raw).ok_or(WireError::BadValue {
                        field: "reason".into(),
                        value: reason_raw,
                    })?)
                };
                let new_tag = parsed.u64_field("new_tag")?;
                let update_count = parsed.u64_field("update_count")?;
                Self::AggregationResult { tag, accepted, reason, new_tag, update_count }
            }
            "notification" => {
                let kind_raw = parsed.take("kind")?;
                let reason_raw = parsed.take("reason")?;
                let kind = match kind_raw.as_str() {
                    "epoch_open" => NotificationKind::EpochOpen,
                    "aggregation_succeeded" => NotificationKind::AggregationSucceeded,
                    "aggregation_failed" => NotificationKind::AggregationFailed(
                        RejectionReason::from_str(&reason_raw).ok_or(WireError::BadValue {
                            field: "reason".into(),
                            value: reason_raw.clone(),
                        })?,
                    ),
                    other => {
                        return Err(WireError::BadValue {
                            field: "kind".into(),
                            value: other.into(),
                        })
                    }
                };
                let threshold = parsed.usize_field("threshold")?;
                let n = parsed.biguint_field("pk_n")?;
                let g = parsed.biguint_field("pk_g")?;
                let public_key = PaillierPublicKey::from_parts(n, g).map_err(|_| {
                    WireError::BadValue { field: "pk_g".into(), value: "non-standard".into() }
                })?;
                Self::Notification {
                    notification: Notification { tag, threshold, kind },
                    public_key,
                }
            }
            "error" => Self::Error { message: parsed.string_field("message")? },
            _ => return Err(WireError::UnknownType(msg_type)),
        };
        parsed.finish()?;
        Ok(envelope)
    }
}

/// Writes one length-prefixed frame.
pub fn write_frame<W: Write>(writer: &mut W, envelope: &Envelope) -> io::Result<()> {
    let body = envelope.encode();
    let len = body.len() as u32;
    writer.write_all(&len.to_be_bytes())?;
    writer.write_all(&body)?;
    writer.flush()
}

/// Reads one frame, bounding the allocation by `max_frame`.
pub fn read_frame<R: Read>(reader: &mut R, max_frame: u32) -> Result<Envelope, WireError> {
    let mut len_bytes = [0u8; 4];
    reader.read_exact(&mut len_bytes)?;
    let declared = u32::from_be_bytes(len_bytes);
    if declared > max_frame {
        return Err(WireError::Oversize { declared, max: max_frame });
    }
    let mut body = vec![0u8; declared as usize];
    reader.read_exact(&mut body)?;
    Envelope::decode(&body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigUint;
    use ppa_afl_core::paillier::keypair_from_primes;

    fn sample_key() -> PaillierPublicKey {
        keypair_from_primes(BigUint::from(11u32), BigUint::from(13u32))
            .unwrap()
            .0
    }

    fn sample_response() -> Envelope {
        Envelope::ClientResponse(ClientResponse {
            tag: 3,
            public_key: sample_key(),
            share: Share { index: 1, value: BigUint::from(8u32), tag: 3 },
            global_model: ModelVector::new(vec![1.0, -0.25]),
            threshold: 2,
        })
    }

    #[test]
    fn canonical_layout_is_sorted_and_stable() {
        let body = sample_response().encode();
        let text = String::from_utf8(body.clone()).unwrap();
        let keys: Vec<&str> = text
            .lines()
            .map(|l| l.split_once('=').unwrap().0)
            .collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
        assert_eq!(body, sample_response().encode());
    }

    #[test]
    fn golden_client_response() {
        let text = String::from_utf8(sample_response().encode()).unwrap();
        let expected = "\
model=3ff0000000000000,bfd0000000000000\n\
pk_g=90\n\
pk_n=8f\n\
share_index=1\n\
share_tag=3\n\
share_value=8\n\
tag=3\n\
threshold=2\n\
type=client_response\n\
v=1\n";
        assert_eq!(text, expected);
    }

    #[test]
    fn roundtrip_client_response() {
        let env = sample_response();
        let back = Envelope::decode(&env.encode()).unwrap();
        match back {
            Envelope::ClientResponse(r) => {
                assert_eq!(r.tag, 3);
                assert_eq!(r.threshold, 2);
                assert_eq!(r.global_model.values(), &[1.0, -0.25]);
                assert_eq!(r.share.index, 1);
                assert_eq!(*r.public_key.n(), BigUint::from(143u32));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_type_is_rejected() {
        let body = b"tag=0\ntype=frobnicate\nv=1\n";
        assert!(matches!(
            Envelope::decode(body).unwrap_err(),
            WireError::UnknownType(_)
        ));
    }

    #[test]
    fn unknown_field_is_rejected() {
        let body = b"client_id=x\nextra=1\ntag=0\ntype=client_request\nv=1\n";
        assert!(matches!(
            Envelope::decode(body).unwrap_err(),
            WireError::UnknownField(_)
        ));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let body = b"client_id=x\ntag=0\ntype=client_request\nv=2\n";
        assert!(matches!(
            Envelope::decode(body).unwrap_err(),
            WireError::ProtocolVersion(2)
        ));
    }

    #[test]
    fn oversize_frame_fails_before_allocation() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(1024u32 * 1024).to_be_bytes());
        let err = read_frame(&mut buf.as_slice(), 1024).unwrap_err();
        assert!(matches!(err, WireError::Oversize { declared, max: 1024 } if declared == 1024 * 1024));
    }

    #[test]
    fn truncated_frame_is_detected() {
        let env = Envelope::ClientRequest { client_id: "alice".into() };
        let mut buf = Vec::new();
        write_frame(&mut buf, &env).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_frame(&mut buf.as_slice(), DEFAULT_MAX_FRAME).unwrap_err(),
            WireError::Truncated
        ));
    }

    #[test]
    fn escaping_survives_hostile_client_ids() {
        let env = Envelope::ClientRequest { client_id: "eve\nmodel=0\\x".into() };
        match Envelope::decode(&env.encode()).unwrap() {
            Envelope::ClientRequest { client_id } => assert_eq!(client_id, "eve\nmodel=0\\x"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_roundtrip_through_a_stream() {
        let env = sample_response();
        let mut buf = Vec::new();
        write_frame(&mut buf, &env).unwrap();
        let back = read_frame(&mut buf.as_slice(), DEFAULT_MAX_FRAME).unwrap();
        assert_eq!(back.encode(), env.encode());
    }
}
