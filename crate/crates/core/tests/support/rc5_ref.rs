//! Straight transcription of Rivest's RC5 description, kept apart from the
//! library: every word lives in a u128 and is masked to `w` bits by hand.

pub struct RefRc5 {
    w: u32,
    s: Vec<u128>,
    rounds: usize,
}

fn magic(w: u32) -> (u128, u128) {
    match w {
        16 => (0xB7E1, 0x9E37),
        32 => (0xB7E1_5163, 0x9E37_79B9),
        64 => (0xB7E1_5162_8AED_2A6B, 0x9E37_79B9_7F4A_7C15),
        _ => panic!("unsupported word size {w}"),
    }
}

impl RefRc5 {
    pub fn new(w: u32, rounds: usize, key: &[u8]) -> Self {
        let mask = (1u128 << w) - 1;
        let u = (w / 8) as usize;
        let c = std::cmp::max(1, key.len().div_ceil(u));
        // L[i/u] = (L[i/u] <<< 8) + K[i], walking the key backwards
        let mut l = vec![0u128; c];
        for i in (0..key.len()).rev() {
            l[i / u] = ((l[i / u] << 8) + key[i] as u128) & mask;
        }
        let t = 2 * (rounds + 1);
        let (p, q) = magic(w);
        let mut s = vec![0u128; t];
        s[0] = p;
        for i in 1..t {
            s[i] = (s[i - 1] + q) & mask;
        }
        let rotl = |x: u128, y: u128| -> u128 {
            let n = (y % w as u128) as u32;
            if n == 0 {
                x
            } else {
                ((x << n) | (x >> (w - n))) & mask
            }
        };
        let (mut a, mut b, mut i, mut j) = (0u128, 0u128, 0usize, 0usize);
        for _ in 0..3 * std::cmp::max(t, c) {
            s[i] = rotl((s[i] + a + b) & mask, 3);
            a = s[i];
            l[j] = rotl((l[j] + a + b) & mask, (a + b) & mask);
            b = l[j];
            i = (i + 1) % t;
            j = (j + 1) % c;
        }
        Self { w, s, rounds }
    }

    fn mask(&self) -> u128 {
        (1u128 << self.w) - 1
    }

    fn rotl(&self, x: u128, y: u128) -> u128 {
        let n = (y % self.w as u128) as u32;
        if n == 0 {
            x
        } else {
            ((x << n) | (x >> (self.w - n))) & self.mask()
        }
    }

    fn rotr(&self, x: u128, y: u128) -> u128 {
        let n = (y % self.w as u128) as u32;
        self.rotl(x, (self.w - n) as u128)
    }

    fn word(&self, bytes: &[u8]) -> u128 {
        bytes.iter().rev().fold(0, |acc, &b| (acc << 8) | b as u128)
    }

    fn put(&self, x: u128, out: &mut [u8]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = (x >> (8 * k)) as u8;
        }
    }

    pub fn encrypt(&self, block: &[u8]) -> Vec<u8> {
        let u = (self.w / 8) as usize;
        assert_eq!(block.len(), 2 * u);
        let m = self.mask();
        let mut a = (self.word(&block[..u]) + self.s[0]) & m;
        let mut b = (self.word(&block[u..]) + self.s[1]) & m;
        for i in 1..=self.rounds {
            a = (self.rotl(a ^ b, b) + self.s[2 * i]) & m;
            b = (self.rotl(b ^ a, a) + self.s[2 * i + 1]) & m;
        }
        let mut out = vec![0u8; 2 * u];
        self.put(a, &mut out[..u]);
        self.put(b, &mut out[u..]);
        out
    }

    pub fn decrypt(&self, block: &[u8]) -> Vec<u8> {
        let u = (self.w / 8) as usize;
        let m = self.mask();
        let mut a = self.word(&block[..u]);
        let mut b = self.word(&block[u..]);
        for i in (1..=self.rounds).rev() {
            b = self.rotr((b + (1u128 << self.w) - self.s[2 * i + 1]) & m, a) ^ a;
            a = self.rotr((a + (1u128 << self.w) - self.s[2 * i]) & m, b) ^ b;
        }
        b = (b + (1u128 << self.w) - self.s[1]) & m;
        a = (a + (1u128 << self.w) - self.s[0]) & m;
        let mut out = vec![0u8; 2 * u];
        self.put(a, &mut out[..u]);
        self.put(b, &mut out[u..]);
        out
    }
}
