use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Speech-to-phoneme batch: contributes L_p only.
    S2tt,
    /// Speech-to-speech batch: contributes every stage loss.
    S2st,
}

/// Interleaves two batch streams. Each slot draws an S2TT batch with
/// probability `ratio`; when one stream runs dry the other fills in.
pub fn mix_tasks<T>(s2tt: Vec<T>, s2st: Vec<T>, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<(Task, T)> {
    let mut a = s2tt.into_iter();
    let mut b = s2st.into_iter();
    let mut out = Vec::new();
    loop {
        let pick_a = rng.random::<f64>() < ratio;
        let next = if pick_a {
            a.next().map(|x| (Task::S2tt, x)).or_else(|| b.next().map(|x| (Task::S2st, x)))
        } else {
            b.next().map(|x| (Task::S2st, x)).or_else(|| a.next().map(|x| (Task::S2tt, x)))
        };
        match next {
            Some(x) => out.push(x),
            None => return out,
        }
    }
}

/// Per-batch task assignment for a single shared batch stream.
pub fn assign_tasks(n_batches: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Vec<Task> {
    (0..n_batches)
        .map(|_| if rng.random::<f64>() < ratio { Task::S2tt } else { Task::S2st })
        .collect()
}
