use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{EventKind, Lane, MemDelta, Priority, ScheduleEvent, SimError, TaskGraph, TaskId, Timeline};

#[derive(PartialEq)]
struct Done {
    end: f64,
    task: TaskId,
}

impl Eq for Done {}

impl Ord for Done {
    // min-heap on (end, task)
    fn cmp(&self, other: &Self) -> Ordering {
        other.end.total_cmp(&self.end).then(other.task.cmp(&self.task))
    }
}

impl PartialOrd for Done {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn lane_slot(device: usize, lane: Lane) -> usize {
    device * 4 + lane as usize
}

/// Execute `graph`: whenever lanes free up, start ready tasks in priority
/// order if every lane they need is idle.
pub fn run(graph: &TaskGraph) -> Result<Timeline, SimError> {
    let tasks = &graph.tasks;
    let n = tasks.len();
    let mut succ: Vec<Vec<TaskId>> = alloc::vec![Vec::new(); n];
    let mut waiting: Vec<usize> = alloc::vec![0; n];
    for (i, t) in tasks.iter().enumerate() {
        for &d in &t.deps {
            succ[d].push(i);
        }
        waiting[i] = t.deps.len();
    }
    let mut ready: BTreeSet<(Priority, TaskId)> =
        (0..n).filter(|&i| waiting[i] == 0).map(|i| (tasks[i].priority, i)).collect();
    let mut busy = alloc::vec![false; graph.n_devices * 4];
    let mut running: BinaryHeap<Done> = BinaryHeap::new();
    let mut start = alloc::vec![f64::NAN; n];
    let mut finished = alloc::vec![false; n];
    let mut n_done = 0;
    let mut now = 0.0;

    loop {
        let mut started = Vec::new();
        for &(p, i) in ready.iter() {
            let lanes = &tasks[i].lanes;
            if lanes.iter().all(|&(d, l, _)| !busy[lane_slot(d, l)]) {
                for &(d, l, _) in lanes {
                    busy[lane_slot(d, l)] = true;
                }
                start[i] = now;
                running.push(Done { end: now + tasks[i].duration, task: i });
                started.push((p, i));
            }
        }
        for k in started {
            ready.remove(&k);
        }
        let Some(first) = running.pop() else { break };
        now = first.end;
        let mut batch = alloc::vec![first.task];
        while running.peek().is_some_and(|d| d.end == now) {
            batch.push(running.pop().unwrap().task);
        }
        for i in batch {
            finished[i] = true;
            n_done += 1;
            for &(d, l, _) in &tasks[i].lanes {
                busy[lane_slot(d, l)] = false;
            }
            for &s in &succ[i] {
                waiting[s] -= 1;
                if waiting[s] == 0 {
                    ready.insert((tasks[s].priority, s));
                }
            }
        }
    }

    if n_done < n {
        return Err(SimError::Deadlock { cycle: find_cycle(graph, &finished) });
    }
    Ok(timeline(graph, &start))
}

/// A dependency cycle among unfinished tasks.
fn find_cycle(graph: &TaskGraph, finished: &[bool]) -> Vec<alloc::string::String> {
    let n = graph.tasks.len();
    // 0 unvisited, 1 on stack, 2 done
    let mut state = alloc::vec![0u8; n];
    let mut stack: Vec<(TaskId, usize)> = Vec::new();
    for root in (0..n).filter(|&i| !finished[i]) {
        if state[root] != 0 {
            continue;
        }
        stack.push((root, 0));
        state[root] = 1;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            let deps = &graph.tasks[v].deps;
            if *next < deps.len() {
                let w = deps[*next];
                *next += 1;
                if finished[w] {
                    continue;
                }
                match state[w] {
                    0 => {
                        state[w] = 1;
                        stack.push((w, 0));
                    }
                    1 => {
                        let from = stack.iter().position(|&(u, _)| u == w).unwrap();
                        return stack[from..].iter().map(|&(u, _)| graph.tasks[u].label()).collect();
                    }
                    _ => {}
                }
            } else {
                state[v] = 2;
                stack.pop();
            }
        }
    }
    Vec::new()
}

fn timeline(graph: &TaskGraph, start: &[f64]) -> Timeline {
    let nd = graph.n_devices;
    let mut events = Vec::new();
    let mut busy_time = alloc::vec![0.0; nd];
    let mut makespan: f64 = 0.0;
    // (time, alloc after free, sequence, delta)
    let mut deltas: Vec<(f64, bool, usize, MemDelta)> = Vec::new();
    let mut group_collectives = alloc::vec![(0u64, 0u64); graph.n_groups];
    for (i, t) in graph.tasks.iter().enumerate() {
        let s = start[i];
        let e = s + t.duration;
        makespan = makespan.max(e);
        match t.kind {
            EventKind::AllGather => group_collectives[t.group].0 += 1,
            EventKind::ReduceScatter => group_collectives[t.group].1 += 1,
            _ => {}
        }
        for &(device, lane, kind) in &t.lanes {
            if lane == Lane::Compute {
                busy_time[device] += t.duration;
            }
            events.push(ScheduleEvent {
                device,
                lane,
                kind,
                ministage: t.ministage,
                microbatch: t.microbatch,
                start: s,
                end: e,
                bytes: t.bytes,
            });
        }
        for &d in &t.on_start {
            deltas.push((s, d.alloc, deltas.len(), d));
        }
        for &d in &t.on_end {
            deltas.push((e, d.alloc, deltas.len(), d));
        }
    }
    events.sort_by(|a, b| {
        a.start
            .total_cmp(&b.start)
            .then(a.device.cmp(&b.device))
            .then(a.lane.cmp(&b.lane))
            .then(a.end.total_cmp(&b.end))
    });
    deltas.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut current = alloc::vec![0i128; nd];
    let mut by_cat = alloc::vec![[0i128; 4]; nd];
    let mut category_peaks = alloc::vec![[0u64; 4]; nd];
    let mut trace: Vec<Vec<(f64, u64)>> = alloc::vec![Vec::new(); nd];
    let mut apply = |d: &MemDelta, current: &mut Vec<i128>, by_cat: &mut Vec<[i128; 4]>| {
        let signed = if d.alloc { d.bytes as i128 } else { -(d.bytes as i128) };
        current[d.device] += signed;
        let c = &mut by_cat[d.device][d.category as usize];
        *c += signed;
        assert!(*c >= 0 && current[d.device] >= 0, "memory freed twice on device {}", d.device);
        let peak = &mut category_peaks[d.device][d.category as usize];
        *peak = (*peak).max(*c as u64);
    };
    for d in &graph.initial {
        apply(d, &mut current, &mut by_cat);
    }
    let baseline: Vec<u64> = current.iter().map(|&b| b as u64).collect();
    for (dev, t) in trace.iter_mut().enumerate() {
        t.push((0.0, baseline[dev]));
    }
    // Frees sort first within one instant so peaks are not overstated; a
    // free whose allocation happens in the same instant (zero-length
    // tasks) waits until after that instant's allocations.
    let mut i = 0;
    while i < deltas.len() {
        let time = deltas[i].0;
        let end = i + deltas[i..].iter().take_while(|x| x.0 == time).count();
        let mut deferred = Vec::new();
        for (_, _, _, d) in &deltas[i..end] {
            let short = !d.alloc && by_cat[d.device][d.category as usize] < d.bytes as i128;
            if short {
                deferred.push(*d);
            } else {
                apply(d, &mut current, &mut by_cat);
            }
        }
        for d in &deferred {
            apply(d, &mut current, &mut by_cat);
        }
        for (_, _, _, d) in &deltas[i..end] {
            let point = (time, current[d.device] as u64);
            let t = &mut trace[d.device];
            match t.last_mut() {
                Some(last) if last.0 == time => *last = point,
                _ => t.push(point),
            }
        }
        i = end;
    }
    let busy_fraction = busy_time.iter().map(|&b| if makespan > 0.0 { b / makespan } else { 0.0 }).collect();
    let collective_counts = group_collectives.iter().fold((0, 0), |acc, &(a, r)| (acc.0 + a, acc.1 + r));
    Timeline {
        events,
        makespan,
        busy_fraction,
        memory_trace: trace,
        category_peaks,
        baseline,
        collective_counts,
        group_collectives,
    }
}
