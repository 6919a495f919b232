use serde::{Deserialize, Serialize};

use crate::error::{PaidError, Result};
use crate::numkit::{Matrix, SeededRng};

use super::corruption::Corruption;
use super::data::SyntheticDataset;

/// Ordered target domains, cycled `rounds` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSequence {
    pub domains: Vec<Corruption>,
    pub rounds: usize,
}

impl DomainSequence {
    pub fn new(domains: Vec<Corruption>, rounds: usize) -> Result<Self> {
        if domains.is_empty() {
            return Err(PaidError::Config("domain sequence needs at least one domain".into()));
        }
        if rounds == 0 {
            return Err(PaidError::Config("domain sequence needs at least one round".into()));
        }
        for d in &domains {
            d.validate()?;
        }
        Ok(Self { domains, rounds })
    }

    pub fn segment_count(&self) -> usize {
        self.domains.len() * self.rounds
    }

    /// `(round, corruption)` of segment `k`.
    pub fn segment_domain(&self, k: usize) -> (usize, Corruption) {
        (k / self.domains.len(), self.domains[k % self.domains.len()])
    }
}

/// One contiguous run of batches from a single domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSegment {
    pub index: usize,
    pub round: usize,
    pub corruption: Corruption,
    pub batches: Vec<(Matrix, Vec<usize>)>,
}

/// Lazily materialized batch stream over a test split. Segment `k` depends
/// only on `(seed, k)`, so segments can be built in any order.
#[derive(Clone, Debug)]
pub struct DomainStream {
    pub sequence: DomainSequence,
    test: SyntheticDataset,
    batch_size: usize,
    seed: u64,
}

impl DomainStream {
    pub fn new(
        sequence: DomainSequence,
        test: SyntheticDataset,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(PaidError::Config("batch_size must be at least 1".into()));
        }
        if test.is_empty() {
            return Err(PaidError::Config("empty test split".into()));
        }
        Ok(Self {
            sequence,
            test,
            batch_size,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.sequence.segment_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// A fresh shuffle of the test split, corrupted as domain `k`.
    pub fn segment(&self, k: usize) -> Result<DomainSegment> {
        let (round, corruption) = self.sequence.segment_domain(k);
        let mut rng = SeededRng::new(self.seed).fork(1000 + k as u64);
        let mut idx: Vec<usize> = (0..self.test.len()).collect();
        rng.shuffle(&mut idx);
        let shuffled = self.test.subset(&idx);
        let corrupted = corruption.apply(&shuffled.samples, &mut rng)?;
        let cols = corrupted.cols();
        let batches = idx
            .chunks(self.batch_size)
            .enumerate()
            .map(|(b, chunk)| {
                let start = b * self.batch_size;
                let rows = chunk.len();
                let data = corrupted.data()[start * cols..(start + rows) * cols].to_vec();
                let labels = shuffled.labels[start..start + rows].to_vec();
                (Matrix::from_vec(rows, cols, data).expect("slice of a matrix"), labels)
            })
            .collect();
        Ok(DomainSegment {
            index: k,
            round,
            corruption,
            batches,
        })
    }

    pub fn segments(&self) -> impl Iterator<Item = Result<DomainSegment>> + '_ {
        (0..self.len()).map(|k| self.segment(k))
    }
}

/// Builds the batch stream for `domains` cycled `rounds` times.
pub fn make_domain_sequence(
    domains: &[Corruption],
    rounds: usize,
    test: &SyntheticDataset,
    batch_size: usize,
    seed: u64,
) -> Result<DomainStream> {
    DomainStream::new(
        DomainSequence::new(domains.to_vec(), rounds)?,
        test.clone(),
        batch_size,
        seed,
    )
}
