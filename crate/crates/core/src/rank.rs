//! Order-statistics multiset over `f64` keys.
//!
//! A treap keyed by value, one node per distinct value with a multiplicity,
//! each node caching the total multiplicity of its subtree. Insertion and
//! rank queries are `O(log n)` expected.
//!
//! Keys are compared with [`f64::total_cmp`] after mapping `-0.0` to `0.0`,
//! so two keys are "equal" exactly when they are the same number. NaN is
//! the caller's responsibility to reject.

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Node {
    key: f64,
    count: u64,
    size: u64,
    priority: u64,
    left: u32,
    right: u32,
}

#[derive(Debug, Clone)]
pub struct OrderStatisticTree {
    nodes: Vec<Node>,
    root: u32,
    prio_state: u64,
}

impl Default for OrderStatisticTree {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn canonical(key: f64) -> f64 {
    if key == 0.0 {
        0.0
    } else {
        key
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl OrderStatisticTree {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            root: NIL,
            prio_state: 0x5EED,
        }
    }

    /// Total number of inserted keys, counting multiplicity.
    pub fn len(&self) -> u64 {
        self.size(self.root)
    }

    pub fn is_empty(&self) -> bool {
        self.root == NIL
    }

    /// Number of distinct keys.
    pub fn distinct(&self) -> usize {
        self.nodes.len()
    }

    pub fn insert(&mut self, key: f64) {
        let key = canonical(key);
        self.root = self.insert_at(self.root, key);
    }

    /// Returns `(count strictly less than key, count equal to key)`.
    pub fn rank(&self, key: f64) -> (u64, u64) {
        let key = canonical(key);
        let mut less = 0;
        let mut t = self.root;
        while t != NIL {
            let node = &self.nodes[t as usize];
            match key.total_cmp(&node.key) {
                std::cmp::Ordering::Less => t = node.left,
                std::cmp::Ordering::Equal => {
                    return (less + self.size(node.left), node.count);
                }
                std::cmp::Ordering::Greater => {
                    less += self.size(node.left) + node.count;
                    t = node.right;
                }
            }
        }
        (less, 0)
    }

    pub fn count_less(&self, key: f64) -> u64 {
        self.rank(key).0
    }

    pub fn count_equal(&self, key: f64) -> u64 {
        self.rank(key).1
    }

    #[inline]
    fn size(&self, t: u32) -> u64 {
        if t == NIL {
            0
        } else {
            self.nodes[t as usize].size
        }
    }

    fn update(&mut self, t: u32) {
        let (l, r) = {
            let n = &self.nodes[t as usize];
            (n.left, n.right)
        };
        let size = self.nodes[t as usize].count + self.size(l) + self.size(r);
        self.nodes[t as usize].size = size;
    }

    fn alloc(&mut self, key: f64) -> u32 {
        let priority = splitmix64(&mut self.prio_state);
        let idx = u32::try_from(self.nodes.len()).expect("more than 2^32 distinct scores");
        self.nodes.push(Node {
            key,
            count: 1,
            size: 1,
            priority,
            left: NIL,
            right: NIL,
        });
        idx
    }

    fn rotate_right(&mut self, t: u32) -> u32 {
        let l = self.nodes[t as usize].left;
        self.nodes[t as usize].left = self.nodes[l as usize].right;
        self.nodes[l as usize].right = t;
        self.update(t);
        self.update(l);
        l
    }

    fn rotate_left(&mut self, t: u32) -> u32 {
        let r = self.nodes[t as usize].right;
        self.nodes[t as usize].right = self.nodes[r as usize].left;
        self.nodes[r as usize].left = t;
        self.update(t);
        self.update(r);
        r
    }

    fn insert_at(&mut self, t: u32, key: f64) -> u32 {
        if t == NIL {
            return self.alloc(key);
        }
        match key.total_cmp(&self.nodes[t as usize].key) {
            std::cmp::Ordering::Equal => {
                let n = &mut self.nodes[t as usize];
                n.count += 1;
                n.size += 1;
                t
            }
            std::cmp::Ordering::Less => {
                let l = self.insert_at(self.nodes[t as usize].left, key);
                self.nodes[t as usize].left = l;
                self.nodes[t as usize].size += 1;
                if self.nodes[l as usize].priority > self.nodes[t as usize].priority {
                    self.rotate_right(t)
                } else {
                    t
                }
            }
            std::cmp::Ordering::Greater => {
                let r = self.insert_at(self.nodes[t as usize].right, key);
                self.nodes[t as usize].right = r;
                self.nodes[t as usize].size += 1;
                if self.nodes[r as usize].priority > self.nodes[t as usize].priority {
                    self.rotate_left(t)
                } else {
                    t
                }
            }
        }
    }

    #[cfg(test)]
    fn depth(&self, t: u32) -> usize {
        if t == NIL {
            0
        } else {
            let n = &self.nodes[t as usize];
            1 + self.depth(n.left).max(self.depth(n.right))
        }
    }
}
