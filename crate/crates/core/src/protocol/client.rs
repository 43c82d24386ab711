//! Client-side protocol state: turns a trained local model plus the
//! encryption server's response into one submittable update.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt;

use rand::Rng;

use crate::encoding::{encrypt_vector, EncodingConfig, ModelVector, VectorError};

use super::{ClientResponse, Tag, Update};

#[derive(Debug, Clone, PartialEq)]
pub enum ClientError {
    /// Local model length differs from the global model served for the tag.
    LengthMismatch { expected: usize, got: usize },
    Vector(VectorError),
}

impl fmt::Display for ClientError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LengthMismatch { expected, got } => {
                write!(f, "local model has {got} parameters, expected {expected}")
            }
            Self::Vector(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(any(feature = "std", test))]
impl std::error::Error for ClientError {}

/// One client's protocol-facing state. Training itself happens elsewhere;
/// this only packages results.
#[derive(Debug)]
pub struct ClientState {
    client_id: String,
    encoding: EncodingConfig,
    /// Update counter per tag ("the count-th local model under v").
    counts: BTreeMap<Tag, u64>,
}

impl ClientState {
    pub fn new(client_id: String, encoding: EncodingConfig) -> Self {
        Self { client_id, encoding, counts: BTreeMap::new() }
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn count_for(&self, tag: Tag) -> u64 {
        self.counts.get(&tag).copied().unwrap_or(0)
    }

    /// Encrypts a locally trained model under the epoch key from
    /// `response` and binds it to that epoch's share. Out-of-range
    /// parameters are clamped (the count of clamped coordinates is
    /// returned for logging); the per-tag counter advances on success.
    pub fn build_update<R: Rng + ?Sized>(
        &mut self,
        response: &ClientResponse,
        mut local_model: ModelVector,
        rng: &mut R,
    ) -> Result<(Update, usize), ClientError> {
        if local_model.len() != response.global_model.len() {
            return Err(ClientError::LengthMismatch {
                expected: response.global_model.len(),
                got: local_model.len(),
            });
        }
        let clamped = local_model.clamp(&self.encoding);
        let ciphertexts = encrypt_vector(&local_model, &response.public_key, &self.encoding, rng)
            .map_err(ClientError::Vector)?;
        let count = self.counts.entry(response.tag).or_insert(0);
        let update = Update {
            tag: response.tag,
            client_id: self.client_id.clone(),
            count: *count,
            ciphertexts,
            share: response.share.clone(),
        };
        *count += 1;
        Ok((update, clamped))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::paillier::keypair_from_primes;
    use crate::shamir::Share;
    use num_bigint::BigUint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn response(tag: Tag, model_len: usize) -> ClientResponse {
        let (pk, _) = keypair_from_primes(
            BigUint::from(18446744073709551557u64),
            BigUint::from(18446744073709551533u64),
        )
        .unwrap();
        ClientResponse {
            tag,
            public_key: pk,
            share: Share { index: 5, value: BigUint::from(9u32), tag },
            global_model: ModelVector::zeros(model_len),
            threshold: 3,
        }
    }

    #[test]
    fn update_carries_tag_ciphertexts_and_share() {
        let mut client = ClientState::new("alice".into(), EncodingConfig::default());
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let resp = response(4, 3);
        let (update, clamped) = client
            .build_update(&resp, ModelVector::new(vec![0.1, -0.2, 0.3]), &mut rng)
            .unwrap();
        assert_eq!(update.tag, 4);
        assert_eq!(update.client_id, "alice");
        assert_eq!(update.count, 0);
        assert_eq!(update.ciphertexts.len(), 3);
        assert_eq!(update.share, resp.share);
        assert_eq!(clamped, 0);
    }

    #[test]
    fn count_increments_per_tag() {
        let mut client = ClientState::new("bob".into(), EncodingConfig::default());
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let resp = response(7, 1);
        let (u1, _) = client
            .build_update(&resp, ModelVector::zeros(1), &mut rng)
            .unwrap();
        let (u2, _) = client
            .build_update(&resp, ModelVector::zeros(1), &mut rng)
            .unwrap();
        assert_eq!(u1.count, 0);
        assert_eq!(u2.count, 1);
        // a different tag starts from zero again
        let (u3, _) = client
            .build_update(&response(8, 1), ModelVector::zeros(1), &mut rng)
            .unwrap();
        assert_eq!(u3.count, 0);
        assert_eq!(client.count_for(7), 2);
    }

    #[test]
    fn divergent_parameters_are_clamped_not_rejected() {
        let mut client = ClientState::new("carol".into(), EncodingConfig::default());
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let resp = response(0, 2);
        let wild = ModelVector::new(vec![1e9, f64::NAN]);
        let (update, clamped) = client.build_update(&resp, wild, &mut rng).unwrap();
        assert_eq!(clamped, 2);
        assert_eq!(update.ciphertexts.len(), 2);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut client = ClientState::new("dave".into(), EncodingConfig::default());
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let err = client
            .build_update(&response(0, 3), ModelVector::zeros(2), &mut rng)
            .unwrap_err();
        assert_eq!(err, ClientError::LengthMismatch { expected: 3, got: 2 });
    }
}
