use std::collections::VecDeque;
use std::sync::{Arc, Barrier};
use std::thread;

use laser::replay::{compose_batch, BatchSpec, ReplayBuffer, ReplayError, Replayer, SharedReplay};
use laser_core::estimators::Origin;
use laser_core::mdp::sample_episode;
use laser_core::{zoo, TabularPolicy, Trajectory};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Deterministic episode of exactly `len` transitions.
fn episode(len: usize, behaviour_id: u64) -> Trajectory {
    let mdp = zoo::chain(len, 1.0, 0.9).unwrap();
    let mut t = sample_episode(&mdp, &TabularPolicy::uniform(len + 1, 1), 0, len);
    t.behaviour_id = behaviour_id;
    t
}

#[test]
fn concurrent_writers_match_serial_replay_of_their_arrival_order() {
    const WRITERS: u64 = 4;
    const PER_WRITER: usize = 2_500;
    const CAPACITY: usize = 5_000;
    let shared = SharedReplay::new(CAPACITY).unwrap();
    let start = Arc::new(Barrier::new(WRITERS as usize + 1));
    let writers: Vec<_> = (0..WRITERS)
        .map(|w| {
            let replay = shared.clone();
            let start = Arc::clone(&start);
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(w);
                start.wait();
                (0..PER_WRITER)
                    .map(|i| {
                        let len = rng.gen_range(1..=12);
                        let id = replay.add_episode(episode(len, w), w, i as u64).unwrap();
                        (id, w, len, i as u64)
                    })
                    .collect::<Vec<_>>()
            })
        })
        .collect();
    // a reader hammers the buffer while writers run
    let reader = {
        let replay = shared.clone();
        let start = Arc::clone(&start);
        thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            start.wait();
            let mut samples = 0;
            for _ in 0..20_000 {
                assert!(replay.size() <= CAPACITY);
                if let Ok(t) = replay.sample_trajectory(&mut rng, 5) {
                    assert!(!t.is_empty() && t.len() <= 5);
                    samples += 1;
                }
            }
            samples
        })
    };
    let mut log: Vec<(u64, u64, usize, u64)> = writers.into_iter().flat_map(|h| h.join().unwrap()).collect();
    reader.join().unwrap();

    log.sort_unstable();
    let ids: Vec<u64> = log.iter().map(|x| x.0).collect();
    assert_eq!(ids, (0..WRITERS * PER_WRITER as u64).collect::<Vec<_>>(), "ids are a gap-free total order");

    // oracle: apply the same inserts serially in logged arrival order
    let mut serial = ReplayBuffer::new(CAPACITY).unwrap();
    for &(id, w, len, step) in &log {
        assert_eq!(serial.add_episode(episode(len, w), w, step).unwrap(), id);
    }
    let got = shared.snapshot();
    assert_eq!(got.dump_rows(), serial.dump_rows());
    assert_eq!(got.size(), serial.size());
    assert_eq!(got.evicted(), serial.evicted());
    for (a, b) in got.episodes().zip(serial.episodes()) {
        assert_eq!(a.trajectory, b.trajectory);
    }
}

#[test]
fn episode_sampling_is_uniform_by_chi_square() {
    let mut buf = ReplayBuffer::new(10_000).unwrap();
    let k = 50;
    for i in 0..k {
        // unequal lengths: sampling must be uniform over episodes, not steps
        buf.add_episode(episode(1 + i % 9, 0), 0, 0).unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut counts = vec![0u64; k];
    for _ in 0..n {
        counts[buf.sample_episode(&mut rng).unwrap().id as usize] += 1;
    }
    let e = n as f64 / k as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}");
}

#[test]
fn chunk_sampling_is_uniform_over_aligned_chunks() {
    let mut buf = ReplayBuffer::new(100).unwrap();
    buf.add_episode(episode(20, 0), 0, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut counts = [0u64; 4];
    for _ in 0..n {
        let t = buf.sample_trajectory(&mut rng, 6).unwrap();
        let start = t.start_state;
        assert_eq!(start % 6, 0);
        assert_eq!(t.len(), if start == 18 { 2 } else { 6 });
        counts[start / 6] += 1;
    }
    let e = n as f64 / 4.0;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat}, p = {p}, counts {counts:?}");
}

#[test]
fn errors_are_typed() {
    assert_eq!(ReplayBuffer::new(0).unwrap_err(), ReplayError::ZeroCapacity);
    let mut buf = ReplayBuffer::new(5).unwrap();
    assert_eq!(
        buf.add_episode(episode(6, 0), 0, 0).unwrap_err(),
        ReplayError::EpisodeTooLarge { len: 6, capacity: 5 }
    );
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(buf.sample_trajectory(&mut rng, 3).unwrap_err(), ReplayError::Empty);
    buf.add_episode(episode(2, 0), 0, 0).unwrap();
    assert_eq!(buf.sample_trajectory(&mut rng, 0).unwrap_err(), ReplayError::ZeroUnroll);
}

#[test]
fn large_batch_mixes_online_and_replay_by_behaviour_id() {
    // B = 32 at alpha = 1/8: 4 online slots from agent 7, 28 replayed from
    // a buffer filled only by other agents.
    let spec = BatchSpec::new(32, 0.125, 10).unwrap();
    assert_eq!((spec.n_online(), spec.n_replay()), (4, 28));
    let replay = SharedReplay::new(10_000).unwrap();
    for w in 0..3u64 {
        for _ in 0..20 {
            replay.add_episode(episode(15, w), w, 0).unwrap();
        }
    }
    let online: Vec<Vec<Trajectory>> = (0..4).map(|_| vec![episode(10, 7)]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut replayer = Replayer::new();
    let batch = compose_batch(&replay, &mut replayer, online, &spec, &mut rng).unwrap();
    let labeled = batch.labeled();
    let steps = |pred: &dyn Fn(&laser_core::estimators::LabeledTrajectory) -> bool| {
        labeled.iter().filter(|l| pred(l)).map(|l| l.trajectory.len()).sum::<usize>()
    };
    assert_eq!(steps(&|l| l.trajectory.behaviour_id == 7), 40);
    assert_eq!(steps(&|l| l.origin == Origin::Online), 40);
    assert_eq!(steps(&|l| l.origin == Origin::Replay), 280);
    assert!(labeled
        .iter()
        .filter(|l| l.origin == Origin::Replay)
        .all(|l| l.trajectory.behaviour_id < 3));
    assert_eq!(batch.transitions(), 320);
}

#[test]
fn empty_replay_skips_replay_slots() {
    let spec = BatchSpec::new(8, 0.25, 5).unwrap();
    let replay = SharedReplay::new(100).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let online: Vec<Vec<Trajectory>> = (0..2).map(|_| vec![episode(5, 0)]).collect();
    let batch = compose_batch(&replay, &mut Replayer::new(), online, &spec, &mut rng).unwrap();
    assert!(batch.replay_missing);
    assert!(batch.replayed.is_empty());
    assert_eq!(batch.online.len(), 2);
}

#[test]
fn bad_batch_specs_are_rejected() {
    assert!(BatchSpec::new(8, 0.3, 5).is_err());
    assert!(BatchSpec::new(0, 0.0, 5).is_err());
    assert!(BatchSpec::new(8, 1.5, 5).is_err());
    assert!(BatchSpec::new(8, 0.5, 0).is_err());
    assert!(BatchSpec::new(10, 0.3, 5).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn buffer_is_a_fifo_of_whole_episodes(cap in 1usize..60, lens in prop::collection::vec(1usize..20, 1..80)) {
        let mut buf = ReplayBuffer::new(cap).unwrap();
        let mut model: VecDeque<(u64, usize)> = VecDeque::new();
        let mut evicted = 0u64;
        for (i, &len) in lens.iter().enumerate() {
            let res = buf.add_episode(episode(len, 0), 0, i as u64);
            if len > cap {
                prop_assert!(res.is_err());
                continue;
            }
            let id = res.unwrap();
            model.push_back((id, len));
            while model.iter().map(|x| x.1).sum::<usize>() > cap {
                model.pop_front();
                evicted += 1;
            }
            prop_assert!(buf.size() <= cap);
            prop_assert_eq!(buf.size(), model.iter().map(|x| x.1).sum::<usize>());
            let ids: Vec<u64> = buf.episodes().map(|e| e.id).collect();
            prop_assert_eq!(ids, model.iter().map(|x| x.0).collect::<Vec<_>>());
            prop_assert_eq!(buf.evicted(), evicted);
        }
    }

    #[test]
    fn sampled_chunks_are_contiguous_pieces_of_stored_episodes(
        lens in prop::collection::vec(1usize..30, 1..10),
        unroll in 1usize..12,
        seed in any::<u64>(),
    ) {
        let mut buf = ReplayBuffer::new(1_000).unwrap();
        for &len in &lens {
            buf.add_episode(episode(len, 0), 0, 0).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let t = buf.sample_trajectory(&mut rng, unroll).unwrap();
            prop_assert!(!t.is_empty() && t.len() <= unroll);
            // chain states count steps from the start, so chunks are aligned
            prop_assert_eq!(t.start_state % unroll, 0);
            for (k, tr) in t.transitions.iter().enumerate() {
                prop_assert_eq!(tr.state, t.start_state + k);
            }
            prop_assert!(t.validate().is_ok());
        }
    }

    #[test]
    fn replayer_unrolls_have_exact_length(lens in prop::collection::vec(1usize..15, 1..6), unroll in 1usize..20, seed in any::<u64>()) {
        let replay = SharedReplay::new(1_000).unwrap();
        for &len in &lens {
            replay.add_episode(episode(len, 0), 0, 0).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = Replayer::new();
        for _ in 0..10 {
            let u = r.next_unroll(&replay, &mut rng, unroll).unwrap();
            prop_assert_eq!(u.iter().map(Trajectory::len).sum::<usize>(), unroll);
            prop_assert!(u.iter().all(|t| !t.is_empty()));
        }
    }
}
