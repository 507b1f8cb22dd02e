#!/usr/bin/env python3
"""Regenerates data/dictionary.txt from the wordfreq English frequency list.

Keeps the most frequent purely alphabetic words of length >= 3, a short
allowlist of genuine two-letter words, and a supplement of programming
vocabulary that general-purpose frequency lists miss.

pip install wordfreq
python3 tools/make_dictionary.py --top 20000 > data/dictionary.txt
"""
import argparse
import re

TWO_LETTER = """
am an as at be by do go he hi if in is it me my no of oh ok on or so to up us we
""".split()

PROGRAMMING = """
alloc realloc malloc calloc dealloc mutex semaphore struct enum bool boolean
callback bitmap namespace struct typedef unicode utf ascii endian encode decode encoder decoder
encrypt decrypt crypt cipher hash hashes socket sockets thread threads async sync
fifo lifo queue dequeue enqueue stack heap malloc mmap munmap ioctl fcntl stdin
stdout stderr getter setter iterator iterate lexer parser tokenize tokenizer
serialize deserialize marshal unmarshal regex subprocess syscall daemon kernel
inode vnode uid gid pid tid cpu gpu ram rom usb pci hid png jpeg gif bmp xml
json yaml html http https url uri tcp udp ssl tls dns ftp smtp ipc rpc api
plugin plugins config configure vector matrix tensor quaternion polygon vertex
vertices texture shader render renderer pixel pixels glyph glyphs font fonts
bitrate codec codecs resample resampler playback metadata timestamp timeout
timer timers unref deref ref refs lookup lookups init stdio printf
scanf sprintf snprintf strlen strcmp strcpy strdup memcpy memset memmove
parse parsed parsing parses append prepend truncate concat splice resize emit
checksum inflate deflate compress decompress widget toolbar checkbox teardown
cursor bitset bitfield unmap scheduler lambda glob wildcard linker loader
opcode operand mipmap
""".split()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--top", type=int, default=20000)
    args = ap.parse_args()
    from wordfreq import top_n_list

    words = set()
    for w in top_n_list("en", args.top * 2):
        if len(words) >= args.top:
            break
        if re.fullmatch(r"[a-z]+", w) and len(w) >= 3:
            words.add(w)
    words.update(TWO_LETTER)
    words.update(w for w in PROGRAMMING if len(w) >= 2)
    for w in sorted(words):
        print(w)


if __name__ == "__main__":
    main()
