//! Episodic FIFO replay shared between agents, the streaming replayer and
//! batch composition.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::mpsc::{sync_channel, Receiver, RecvError, SendError, SyncSender};
use std::sync::Arc;

use laser_core::estimators::LabeledTrajectory;
use laser_core::Trajectory;
use parking_lot::RwLock;
use rand::Rng;
use serde::Serialize;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("replay capacity must be positive")]
    ZeroCapacity,
    #[error("episode of {len} transitions does not fit a buffer of capacity {capacity}")]
    EpisodeTooLarge { len: usize, capacity: usize },
    #[error("cannot store an empty episode")]
    EmptyEpisode,
    #[error("replay buffer is empty")]
    Empty,
    #[error("unroll length must be positive")]
    ZeroUnroll,
    #[error("invalid batch spec: {0}")]
    BadBatchSpec(String),
    #[error("online source supplied {got} unrolls, batch needs {need}")]
    OnlineShortfall { got: usize, need: usize },
}

/// A stored episode with the bookkeeping needed for dumps.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEpisode {
    /// Arrival sequence number, unique per buffer.
    pub id: u64,
    pub agent_id: u64,
    /// Learner step of the writing agent at insertion time.
    pub insertion_step: u64,
    pub trajectory: Arc<Trajectory>,
}

/// One row of a buffer dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DumpRow {
    pub episode_id: u64,
    pub agent_id: u64,
    pub length: usize,
    pub insertion_step: u64,
}

/// Bounded FIFO of whole episodes; capacity counts transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<StoredEpisode>,
    size: usize,
    next_id: u64,
    evicted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        if capacity == 0 {
            return Err(ReplayError::ZeroCapacity);
        }
        Ok(ReplayBuffer {
            capacity,
            episodes: VecDeque::new(),
            size: 0,
            next_id: 0,
            evicted: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn evicted(&self) -> u64 {
        self.evicted
    }

    /// Append an episode, evicting the oldest ones until it fits. Returns the
    /// arrival id.
    pub fn add_episode(&mut self, trajectory: Trajectory, agent_id: u64, step: u64) -> Result<u64, ReplayError> {
        let len = trajectory.len();
        if len == 0 {
            return Err(ReplayError::EmptyEpisode);
        }
        if len > self.capacity {
            return Err(ReplayError::EpisodeTooLarge {
                len,
                capacity: self.capacity,
            });
        }
        while self.size + len > self.capacity {
            let old = self.episodes.pop_front().expect("size > 0 implies an episode");
            self.size -= old.trajectory.len();
            self.evicted += 1;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.size += len;
        self.episodes.push_back(StoredEpisode {
            id,
            agent_id,
            insertion_step: step,
            trajectory: Arc::new(trajectory),
        });
        Ok(id)
    }

    pub fn episodes(&self) -> impl Iterator<Item = &StoredEpisode> {
        self.episodes.iter()
    }

    /// Uniformly chosen stored episode.
    pub fn sample_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&StoredEpisode, ReplayError> {
        if self.episodes.is_empty() {
            return Err(ReplayError::Empty);
        }
        Ok(&self.episodes[rng.gen_range(0..self.episodes.len())])
    }

    /// Stateless sample: a uniform episode, then a uniform chunk among the
    /// aligned chunks `[0, T), [T, 2T), ...`. An episode no longer than `T`
    /// comes back whole, terminal flag intact.
    pub fn sample_trajectory<R: Rng + ?Sized>(&self, rng: &mut R, unroll: usize) -> Result<Trajectory, ReplayError> {
        if unroll == 0 {
            return Err(ReplayError::ZeroUnroll);
        }
        let ep = &self.sample_episode(rng)?.trajectory;
        let chunks = ep.len().div_ceil(unroll);
        let start = rng.gen_range(0..chunks) * unroll;
        Ok(ep.slice(start, unroll))
    }

    pub fn dump_rows(&self) -> Vec<DumpRow> {
        self.episodes
            .iter()
            .map(|e| DumpRow {
                episode_id: e.id,
                agent_id: e.agent_id,
                length: e.trajectory.len(),
                insertion_step: e.insertion_step,
            })
            .collect()
    }

    /// CSV dump with header `episode_id,agent_id,length,insertion_step`.
    pub fn dump_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.dump_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cloneable handle to a buffer shared by several agents. Every call takes
/// the lock once, so adds (with their evictions) and samples are atomic and
/// totally ordered. The lock is fair, so a stream of writers cannot starve
/// readers.
#[derive(Debug, Clone)]
pub struct SharedReplay(Arc<RwLock<ReplayBuffer>>);

impl SharedReplay {
    pub fn new(capacity: usize) -> Result<Self, ReplayError> {
        Ok(SharedReplay(Arc::new(RwLock::new(ReplayBuffer::new(capacity)?))))
    }

    pub fn add_episode(&self, trajectory: Trajectory, agent_id: u64, step: u64) -> Result<u64, ReplayError> {
        self.0.write().add_episode(trajectory, agent_id, step)
    }

    pub fn sample_trajectory<R: Rng + ?Sized>(&self, rng: &mut R, unroll: usize) -> Result<Trajectory, ReplayError> {
        self.0.read().sample_trajectory(rng, unroll)
    }

    pub fn sample_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Arc<Trajectory>, ReplayError> {
        Ok(Arc::clone(&self.0.read().sample_episode(rng)?.trajectory))
    }

    pub fn size(&self) -> usize {
        self.0.read().size()
    }

    pub fn n_episodes(&self) -> usize {
        self.0.read().n_episodes()
    }

    pub fn is_empty(&self) -> bool {
        self.0.read().is_empty()
    }

    /// Copy of the current contents.
    pub fn snapshot(&self) -> ReplayBuffer {
        self.0.read().clone()
    }

    pub fn ptr_eq(&self, other: &SharedReplay) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// A fixed number of environment steps handed to the learner as one batch
/// slot. It may span an episode boundary, so it holds one or more
/// trajectory segments whose lengths add up to the unroll length.
pub type Unroll = Vec<Trajectory>;

/// Streams consecutive unrolls out of replay: each sampled episode is played
/// from its beginning, and when it runs out the next episode is drawn
/// uniformly. A cursor keeps its episode alive even after eviction.
#[derive(Debug, Default, Clone)]
pub struct Replayer {
    cursor: Option<(Arc<Trajectory>, usize)>,
}

impl Replayer {
    pub fn new() -> Self {
        Replayer::default()
    }

    pub fn next_unroll<R: Rng + ?Sized>(
        &mut self,
        replay: &SharedReplay,
        rng: &mut R,
        unroll: usize,
    ) -> Result<Unroll, ReplayError> {
        if unroll == 0 {
            return Err(ReplayError::ZeroUnroll);
        }
        let mut out = Vec::new();
        let mut remaining = unroll;
        while remaining > 0 {
            let (ep, pos) = match self.cursor.take() {
                Some((ep, pos)) if pos < ep.len() => (ep, pos),
                _ => (replay.sample_episode(rng)?, 0),
            };
            let take = remaining.min(ep.len() - pos);
            out.push(ep.slice(pos, take));
            remaining -= take;
            self.cursor = Some((ep, pos + take));
        }
        Ok(out)
    }
}

/// Batch shape: `B` unroll slots, a fraction `alpha` of them online.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub online_fraction: f64,
    pub unroll_length: usize,
}

impl BatchSpec {
    pub fn new(batch_size: usize, online_fraction: f64, unroll_length: usize) -> Result<Self, ReplayError> {
        let spec = BatchSpec {
            batch_size,
            online_fraction,
            unroll_length,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ReplayError> {
        if self.batch_size == 0 {
            return Err(ReplayError::BadBatchSpec("batch_size must be positive".into()));
        }
        if self.unroll_length == 0 {
            return Err(ReplayError::ZeroUnroll);
        }
        if !(0.0..=1.0).contains(&self.online_fraction) {
            return Err(ReplayError::BadBatchSpec("online_fraction must be in [0, 1]".into()));
        }
        let k = self.batch_size as f64 * self.online_fraction;
        if (k - k.round()).abs() > 1e-9 {
            return Err(ReplayError::BadBatchSpec(format!(
                "batch_size * online_fraction = {k} is not an integer"
            )));
        }
        Ok(())
    }

    pub fn n_online(&self) -> usize {
        (self.batch_size as f64 * self.online_fraction).round() as usize
    }

    pub fn n_replay(&self) -> usize {
        self.batch_size - self.n_online()
    }

    /// `alpha = 0`: every slot comes from replay.
    pub fn pure_off_policy(&self) -> bool {
        self.n_online() == 0
    }

    pub fn replay_ratio(&self) -> f64 {
        1.0 - self.online_fraction
    }
}

/// A composed batch before it is flattened for the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedBatch {
    pub online: Vec<Unroll>,
    pub replayed: Vec<Unroll>,
    /// Replay slots were requested but the buffer was still empty.
    pub replay_missing: bool,
    /// The batch spec had no online slots.
    pub pure_off_policy: bool,
}

impl ComposedBatch {
    pub fn labeled(&self) -> Vec<LabeledTrajectory> {
        let online = self.online.iter().flatten().cloned().map(LabeledTrajectory::online);
        let replay = self.replayed.iter().flatten().cloned().map(LabeledTrajectory::replay);
        online.chain(replay).collect()
    }

    pub fn transitions(&self) -> usize {
        self.online.iter().chain(&self.replayed).flatten().map(Trajectory::len).sum()
    }
}

/// Take the online unrolls already dequeued and draw the replay part. If the
/// buffer is still empty the replay slots are left out and flagged. Inserting
/// the online data into replay is the caller's job, after this returns.
pub fn compose_batch<R: Rng + ?Sized>(
    replay: &SharedReplay,
    replayer: &mut Replayer,
    online: Vec<Unroll>,
    spec: &BatchSpec,
    rng: &mut R,
) -> Result<ComposedBatch, ReplayError> {
    spec.validate()?;
    if online.len() != spec.n_online() {
        return Err(ReplayError::OnlineShortfall {
            got: online.len(),
            need: spec.n_online(),
        });
    }
    let mut replayed = Vec::with_capacity(spec.n_replay());
    let replay_missing = spec.n_replay() > 0 && replay.is_empty();
    if !replay_missing {
        for _ in 0..spec.n_replay() {
            replayed.push(replayer.next_unroll(replay, rng, spec.unroll_length)?);
        }
    }
    Ok(ComposedBatch {
        online,
        replayed,
        replay_missing,
        pure_off_policy: spec.pure_off_policy(),
    })
}

/// Bounded blocking FIFO from an actor to its learner.
pub fn online_queue<T>(capacity: usize) -> (OnlineSender<T>, OnlineReceiver<T>) {
    let (tx, rx) = sync_channel(capacity.max(1));
    (OnlineSender(tx), OnlineReceiver(rx))
}

#[derive(Debug)]
pub struct OnlineSender<T>(SyncSender<T>);

impl<T> Clone for OnlineSender<T> {
    fn clone(&self) -> Self {
        OnlineSender(self.0.clone())
    }
}

impl<T> OnlineSender<T> {
    /// Blocks while the queue is full.
    pub fn send(&self, item: T) -> Result<(), SendError<T>> {
        self.0.send(item)
    }
}

#[derive(Debug)]
pub struct OnlineReceiver<T>(Receiver<T>);

impl<T> OnlineReceiver<T> {
    pub fn recv(&self) -> Result<T, RecvError> {
        self.0.recv()
    }

    /// Blocks until `n` items have arrived.
    pub fn recv_n(&self, n: usize) -> Result<Vec<T>, RecvError> {
        (0..n).map(|_| self.recv()).collect()
    }
}

/// Glues consecutive trajectory segments of one actor back into episodes.
#[derive(Debug, Default, Clone)]
pub struct EpisodeAssembler {
    pending: Option<Trajectory>,
}

impl EpisodeAssembler {
    pub fn new() -> Self {
        EpisodeAssembler::default()
    }

    /// Feed the next segment. `episode_end` marks the last segment of an
    /// episode (terminal or cut by the time limit). Returns the finished
    /// episode when there is one.
    pub fn push(&mut self, segment: Trajectory, episode_end: bool) -> Option<Trajectory> {
        let merged = match self.pending.take() {
            None => segment,
            Some(mut head) => {
                debug_assert_eq!(head.final_state, segment.start_state);
                head.transitions.extend(segment.transitions);
                head.final_state = segment.final_state;
                head.terminated = segment.terminated;
                head
            }
        };
        if episode_end || merged.terminated {
            Some(merged).filter(|t| !t.is_empty())
        } else {
            self.pending = Some(merged);
            None
        }
    }

    pub fn pending_len(&self) -> usize {
        self.pending.as_ref().map_or(0, Trajectory::len)
    }
}
