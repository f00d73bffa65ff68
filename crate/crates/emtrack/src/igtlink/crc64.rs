//! CRC-64/ECMA-182: polynomial 0x42F0E1EBA9EA3693, init 0, MSB-first, no
//! reflection, no final xor. Protects OpenIGTLink message bodies.

pub const POLY: u64 = 0x42F0_E1EB_A9EA_3693;

const fn build_table() -> [u64; 256] {
    let mut table = [0u64; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u64) << 56;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 0x8000_0000_0000_0000 != 0 {
                (crc << 1) ^ POLY
            } else {
                crc << 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

static TABLE: [u64; 256] = build_table();

pub fn crc64(data: &[u8]) -> u64 {
    let mut crc = 0u64;
    for &byte in data {
        let index = ((crc >> 56) as u8 ^ byte) as usize;
        crc = (crc << 8) ^ TABLE[index];
    }
    crc
}
